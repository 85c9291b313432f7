// Command-line front end: dataset generation, two-stage training, evaluation,
// inference and the temporal-attention ablation grid.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bevpred/trainer.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// JSON config mirrors TrainConfig field names exactly; CLI flags override.
void apply_json(bevpred::TrainConfig& c, const json& j) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("stage", c.stage);
    get("epochs", c.epochs);
    get("max_lr", c.max_lr);
    get("batch_size", c.batch_size);
    get("seed", c.seed);
    get("pattern", c.pattern);
    get("n_blocks", c.n_blocks);
    get("bev_h", c.bev_h);
    get("bev_w", c.bev_w);
    get("x_range", c.x_range);
    get("y_range", c.y_range);
    get("c_bev", c.c_bev);
    get("n_bev_layers", c.n_bev_layers);
    get("attn_heads", c.attn_heads);
    get("c1", c.c1);
    get("c2", c.c2);
    get("patch", c.patch);
    get("t_in", c.t_in);
    get("t_pred", c.t_pred);
    get("augment", c.augment);
    get("seg_topk", c.seg_topk);
    get("min_cells", c.min_cells);
    get("grad_clip", c.grad_clip);
    get("weight_decay", c.weight_decay);
    get("warmup_frac", c.warmup_frac);
    get("max_steps", c.max_steps);
    get("log_every", c.log_every);
    get("dataset", c.dataset);
    get("val_dataset", c.val_dataset);
    get("init_checkpoint", c.init_checkpoint);
    get("out_checkpoint", c.out_checkpoint);
}

void add_train_flags(CLI::App* app, bevpred::TrainConfig& c, std::string& config_path) {
    app->add_option("--config", config_path, "JSON config file (fields mirror TrainConfig)");
    app->add_option("--epochs", c.epochs);
    app->add_option("--max-lr", c.max_lr);
    app->add_option("--batch-size", c.batch_size);
    app->add_option("--seed", c.seed);
    app->add_option("--pattern", c.pattern)->check(CLI::IsMember({"none", "TS", "TST", "TSST"}));
    app->add_option("--n-blocks", c.n_blocks);
    app->add_option("--bev-h", c.bev_h);
    app->add_option("--bev-w", c.bev_w);
    app->add_option("--x-range", c.x_range);
    app->add_option("--y-range", c.y_range);
    app->add_option("--c-bev", c.c_bev);
    app->add_option("--n-bev-layers", c.n_bev_layers);
    app->add_option("--attn-heads", c.attn_heads);
    app->add_option("--c1", c.c1);
    app->add_option("--c2", c.c2);
    app->add_option("--patch", c.patch);
    app->add_option("--t-in", c.t_in);
    app->add_option("--t-pred", c.t_pred);
    app->add_flag("--augment,!--no-augment", c.augment);
    app->add_option("--seg-topk", c.seg_topk)->check(CLI::IsMember({"loss", "confidence"}));
    app->add_option("--min-cells", c.min_cells);
    app->add_option("--grad-clip", c.grad_clip);
    app->add_option("--weight-decay", c.weight_decay);
    app->add_option("--warmup-frac", c.warmup_frac);
    app->add_option("--max-steps", c.max_steps);
    app->add_option("--log-every", c.log_every);
    app->add_option("--dataset", c.dataset);
    app->add_option("--val-dataset", c.val_dataset);
    app->add_option("--init-checkpoint", c.init_checkpoint);
    app->add_option("--out-checkpoint", c.out_checkpoint);
}

// re-parse order: defaults <- JSON <- CLI (CLI wins)
bevpred::TrainConfig resolve_config(CLI::App* app, const bevpred::TrainConfig& cli_values,
                                    const std::string& config_path) {
    if (config_path.empty()) return cli_values;
    std::ifstream f(config_path);
    if (!f) throw std::runtime_error("cannot open config " + config_path);
    json j = json::parse(f);
    bevpred::TrainConfig merged;
    apply_json(merged, j);
    // overlay every flag the user actually passed
    bevpred::TrainConfig out = merged;
    auto copy_if = [&](const char* flag, auto member) {
        if (app->count(flag) > 0) out.*member = cli_values.*member;
    };
    copy_if("--epochs", &bevpred::TrainConfig::epochs);
    copy_if("--max-lr", &bevpred::TrainConfig::max_lr);
    copy_if("--batch-size", &bevpred::TrainConfig::batch_size);
    copy_if("--seed", &bevpred::TrainConfig::seed);
    copy_if("--pattern", &bevpred::TrainConfig::pattern);
    copy_if("--n-blocks", &bevpred::TrainConfig::n_blocks);
    copy_if("--bev-h", &bevpred::TrainConfig::bev_h);
    copy_if("--bev-w", &bevpred::TrainConfig::bev_w);
    copy_if("--x-range", &bevpred::TrainConfig::x_range);
    copy_if("--y-range", &bevpred::TrainConfig::y_range);
    copy_if("--c-bev", &bevpred::TrainConfig::c_bev);
    copy_if("--n-bev-layers", &bevpred::TrainConfig::n_bev_layers);
    copy_if("--attn-heads", &bevpred::TrainConfig::attn_heads);
    copy_if("--c1", &bevpred::TrainConfig::c1);
    copy_if("--c2", &bevpred::TrainConfig::c2);
    copy_if("--patch", &bevpred::TrainConfig::patch);
    copy_if("--t-in", &bevpred::TrainConfig::t_in);
    copy_if("--t-pred", &bevpred::TrainConfig::t_pred);
    copy_if("--augment", &bevpred::TrainConfig::augment);
    copy_if("--no-augment", &bevpred::TrainConfig::augment);
    copy_if("--seg-topk", &bevpred::TrainConfig::seg_topk);
    copy_if("--min-cells", &bevpred::TrainConfig::min_cells);
    copy_if("--grad-clip", &bevpred::TrainConfig::grad_clip);
    copy_if("--weight-decay", &bevpred::TrainConfig::weight_decay);
    copy_if("--warmup-frac", &bevpred::TrainConfig::warmup_frac);
    copy_if("--max-steps", &bevpred::TrainConfig::max_steps);
    copy_if("--log-every", &bevpred::TrainConfig::log_every);
    copy_if("--dataset", &bevpred::TrainConfig::dataset);
    copy_if("--val-dataset", &bevpred::TrainConfig::val_dataset);
    copy_if("--init-checkpoint", &bevpred::TrainConfig::init_checkpoint);
    copy_if("--out-checkpoint", &bevpred::TrainConfig::out_checkpoint);
    return out;
}

json eval_to_json(const bevpred::EvalResult& ev) {
    json j;
    j["iou"] = ev.iou;
    j["vpq"] = ev.vpq;
    j["n_samples"] = ev.n_samples;
    j["frame_iou"] = ev.frame_iou;
    j["frame_vpq"] = ev.frame_vpq;
    return j;
}

void print_eval_text(const bevpred::EvalResult& ev) {
    std::printf("samples        %10d\n", ev.n_samples);
    std::printf("IoU            %10.4f\n", ev.iou);
    std::printf("VPQ            %10.4f\n", ev.vpq);
    for (size_t f = 0; f < ev.frame_iou.size(); f++)
        std::printf("t=%zu            IoU %.4f   VPQ-term %.4f\n", f, ev.frame_iou[f],
                    ev.frame_vpq[f]);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"camera-to-BEV instance prediction pipeline"};
    app.require_subcommand(1);

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic sequence dataset");
    std::string gen_out = "dataset.bpfd";
    int gen_count = 16;
    uint64_t gen_seed = 1;
    bevpred::GenConfig gcfg;
    int gen_bev_h = 32, gen_bev_w = 32;
    double gen_x_range = 16.0, gen_y_range = 16.0;
    gen->add_option("--out", gen_out, "output dataset path");
    gen->add_option("--count", gen_count, "number of sequences");
    gen->add_option("--seed", gen_seed, "base seed (sample i uses seed+i)");
    gen->add_option("--min-agents", gcfg.min_agents);
    gen->add_option("--max-agents", gcfg.max_agents);
    gen->add_option("--im-h", gcfg.im_h);
    gen->add_option("--im-w", gcfg.im_w);
    gen->add_option("--n-cams", gcfg.n_cams);
    gen->add_option("--t-in", gcfg.t_in);
    gen->add_option("--t-pred", gcfg.t_pred);
    gen->add_option("--bev-h", gen_bev_h);
    gen->add_option("--bev-w", gen_bev_w);
    gen->add_option("--x-range", gen_x_range);
    gen->add_option("--y-range", gen_y_range);

    // ---- train ----
    auto* train = app.add_subcommand("train", "run one training stage");
    bevpred::TrainConfig tc;
    std::string train_cfg_path;
    train->add_option("--stage", tc.stage, "1: trunk pretraining, 2: prediction training")
        ->check(CLI::IsMember({1, 2}));
    add_train_flags(train, tc, train_cfg_path);

    // ---- evaluate ----
    auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
    bevpred::TrainConfig ec;
    std::string eval_cfg_path, eval_ckpt, eval_json_out;
    ev->add_option("--checkpoint", eval_ckpt)->required();
    ev->add_option("--json-out", eval_json_out, "also write the metrics report as JSON");
    add_train_flags(ev, ec, eval_cfg_path);

    // ---- infer ----
    auto* in = app.add_subcommand("infer", "run inference on one dataset sample");
    bevpred::TrainConfig ic;
    std::string infer_cfg_path, infer_ckpt, infer_out = "inference";
    int infer_index = 0;
    in->add_option("--checkpoint", infer_ckpt)->required();
    in->add_option("--index", infer_index, "sample index within the dataset");
    in->add_option("--out-dir", infer_out);
    add_train_flags(in, ic, infer_cfg_path);

    // ---- ablate ----
    auto* ab = app.add_subcommand("ablate", "train the temporal ablation grid");
    bevpred::TrainConfig ac;
    std::string ab_cfg_path, ab_json_out;
    ab->add_option("--json-out", ab_json_out, "write the grid report as JSON");
    add_train_flags(ab, ac, ab_cfg_path);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            gcfg.bev.H = gen_bev_h;
            gcfg.bev.W = gen_bev_w;
            gcfg.bev.x_range = gen_x_range;
            gcfg.bev.y_range = gen_y_range;
            std::vector<bevpred::SequenceSample> samples =
                bevpred::generate_samples(gen_seed, gen_count, gcfg);
            bevpred::write_dataset(gen_out, samples);
            std::printf("wrote %d sequences to %s\n", gen_count, gen_out.c_str());
        } else if (train->parsed()) {
            bevpred::TrainConfig cfg = resolve_config(train, tc, train_cfg_path);
            if (train->count("--stage")) cfg.stage = tc.stage;
            if (cfg.stage == 1)
                bevpred::train_stage1(cfg);
            else
                bevpred::train_stage2(cfg);
        } else if (ev->parsed()) {
            bevpred::TrainConfig cfg = resolve_config(ev, ec, eval_cfg_path);
            auto samples = bevpred::read_dataset(cfg.dataset);
            bevpred::Model model(bevpred::model_config_from(cfg), cfg.seed);
            bevpred::load_checkpoint(eval_ckpt, model.params());
            bevpred::EvalResult res = bevpred::evaluate_model(model, samples, cfg.min_cells);
            print_eval_text(res);
            if (!eval_json_out.empty()) {
                std::ofstream out(eval_json_out);
                out << eval_to_json(res).dump(2) << "\n";
            }
        } else if (in->parsed()) {
            bevpred::TrainConfig cfg = resolve_config(in, ic, infer_cfg_path);
            auto samples = bevpred::read_dataset(cfg.dataset);
            if (infer_index < 0 || static_cast<size_t>(infer_index) >= samples.size())
                throw std::runtime_error("sample index out of range");
            bevpred::Model model(bevpred::model_config_from(cfg), cfg.seed);
            bevpred::load_checkpoint(infer_ckpt, model.params());
            bevpred::infer_sample(model, samples[static_cast<size_t>(infer_index)], infer_out,
                                  cfg.min_cells);
            std::printf("wrote inference artifacts to %s\n", infer_out.c_str());
        } else if (ab->parsed()) {
            bevpred::TrainConfig cfg = resolve_config(ab, ac, ab_cfg_path);
            auto rows = bevpred::run_ablation(cfg);
            std::printf("%-6s %-8s %-10s %-10s\n", "blocks", "pattern", "IoU", "VPQ");
            json jrows = json::array();
            for (const auto& r : rows) {
                std::printf("%-6d %-8s %-10.4f %-10.4f\n", r.n_blocks, r.pattern.c_str(),
                            r.val_iou, r.val_vpq);
                jrows.push_back({{"pattern", r.pattern},
                                 {"n_blocks", r.n_blocks},
                                 {"iou", r.val_iou},
                                 {"vpq", r.val_vpq}});
            }
            if (!ab_json_out.empty()) {
                std::ofstream out(ab_json_out);
                out << jrows.dump(2) << "\n";
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
