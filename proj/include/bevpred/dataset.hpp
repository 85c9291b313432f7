#pragma once

#include <string>
#include <vector>

#include "bevpred/scene.hpp"

namespace bevpred {

// Sequence-sample container: magic "BPFD", u32 version, u32 sample count;
// per sample a config block, a calibration block (cameras + input-frame ego
// poses), the named tensors, and a trailing CRC32 over the sample's bytes.
// Failure modes are distinct: VersionError, TruncatedError, ChecksumError.

void write_dataset(const std::string& path, const std::vector<SequenceSample>& samples);
std::vector<SequenceSample> read_dataset(const std::string& path);

// header peek without loading payloads
uint32_t dataset_sample_count(const std::string& path);

}  // namespace bevpred
