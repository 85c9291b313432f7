#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bevpred/tensor.hpp"

namespace bevpred {

// Named parameter registry. Insertion order is preserved so optimizer state
// and checkpoints line up deterministically.
class ParamMap {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor* find(const std::string& name);
    const Tensor* find(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    size_t size() const { return items_.size(); }
    int64_t total_elements() const;

    void zero_grad();
    void set_requires_grad(bool rg);
    // applies to every parameter whose name starts with `prefix`
    void set_requires_grad_prefix(const std::string& prefix, bool rg);

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, size_t> index_;
};

// Checkpoint container: "BPFT" magic, u32 version, u32 tensor count, then
// named tensor blocks.
void save_checkpoint(const std::string& path, const ParamMap& params);

// strict=true: file names and parameter names must match exactly.
// strict=false: the intersection is copied (shapes must still agree);
// returns the number of tensors loaded either way.
size_t load_checkpoint(const std::string& path, ParamMap& params, bool strict = true);

// Raw containers in the same encoding, for exported predictions etc.
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path);

}  // namespace bevpred
