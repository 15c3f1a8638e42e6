#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mcmim/checkpoint.hpp"
#include "mcmim/config.hpp"
#include "mcmim/dataset.hpp"
#include "mcmim/eval.hpp"
#include "mcmim/gradcheck.hpp"
#include "mcmim/image.hpp"
#include "mcmim/train.hpp"

namespace fs = std::filesystem;
using namespace mcmim;

namespace {

struct CliArgs {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::string checkpoint;
  std::string tokenizer;
  std::string axis;
  std::string values;
  std::string run_id;
  std::string mode;  // grad-check: f32 | f64 | both
  int index = 0;
  std::vector<std::pair<std::string, std::string>> overrides;
};

void print_usage() {
  std::cout <<
      "usage: mcmim <command> [options] [--<config.key> <value> ...]\n"
      "\n"
      "commands:\n"
      "  tokenizer-fit    fit the k-means codebook and export it\n"
      "  pretrain         masked-image-modeling pre-training\n"
      "  probe            linear probe of a pre-trained checkpoint\n"
      "  finetune         full fine-tuning of a pre-trained checkpoint\n"
      "  ablate           sweep tau / omega / mask and emit a CSV table\n"
      "  inspect-targets  dump token ids, multi-choice targets and affinity\n"
      "  grad-check       analytic vs finite-difference gradient report\n"
      "\n"
      "options:\n"
      "  --config <file>      flat key=value config file\n"
      "  --out <dir>          output directory (default $MCMIM_OUT or .)\n"
      "  --checkpoint <file>  input checkpoint (probe/finetune/inspect-targets)\n"
      "  --tokenizer <file>   pre-fit codebook for pretrain\n"
      "  --index <n>          test-image index for inspect-targets\n"
      "  --axis <tau|omega|mask>  ablation axis\n"
      "  --values <list>      ablation values (comma separated)\n"
      "  --run-id <id>        row id for results.csv\n"
      "  --mode <f32|f64|both>  grad-check precision (default both)\n"
      "  --<key> <value>      any config key override, e.g. --target.omega 0.5\n";
}

CliArgs parse_cli(int argc, char** argv) {
  CliArgs args;
  if (argc < 2) throw ConfigError("missing command; try --help");
  args.command = argv[1];
  if (const char* env = std::getenv("MCMIM_OUT")) args.out_dir = env;
  if (args.out_dir.empty()) args.out_dir = ".";
  for (int i = 2; i < argc; ++i) {
    const std::string arg = argv[i];
    auto need_value = [&](const char* name) -> std::string {
      if (i + 1 >= argc) throw ConfigError(std::string(name) + " requires a value");
      return argv[++i];
    };
    if (arg == "--config") args.config_path = need_value("--config");
    else if (arg == "--out") args.out_dir = need_value("--out");
    else if (arg == "--checkpoint") args.checkpoint = need_value("--checkpoint");
    else if (arg == "--tokenizer") args.tokenizer = need_value("--tokenizer");
    else if (arg == "--axis") args.axis = need_value("--axis");
    else if (arg == "--values") args.values = need_value("--values");
    else if (arg == "--run-id") args.run_id = need_value("--run-id");
    else if (arg == "--mode") args.mode = need_value("--mode");
    else if (arg == "--index") args.index = std::stoi(need_value("--index"));
    else if (arg.rfind("--", 0) == 0)
      args.overrides.emplace_back(arg.substr(2), need_value(arg.c_str()));
    else throw ConfigError("unexpected argument: " + arg);
  }
  return args;
}

TrainConfig load_config(const CliArgs& args) {
  if (args.config_path.empty()) return parse_config_text("", args.overrides);
  return parse_config_file(args.config_path, args.overrides);
}

// Re-applies command-line overrides on top of a checkpoint's config snapshot.
TrainConfig config_from_checkpoint(const TrainConfig& saved, const CliArgs& args) {
  std::string text;
  for (const auto& [k, v] : config_key_values(saved)) {
    if (v.empty()) continue;
    text += k + " " + v + "\n";
  }
  return parse_config_text(text, args.overrides);
}

Dataset load_dataset(const TrainConfig& cfg) {
  if (cfg.data_dir.empty())
    return generate_toy_dataset(cfg.seed, cfg.data_train, cfg.data_test, cfg.data_classes,
                                cfg.data_image_size);
  // imported images pre-train as-is; labeled ones double as the test split
  Dataset ds;
  ds.classes = cfg.data_classes;
  ds.train = import_image_dir(cfg.data_dir);
  for (const Image& img : ds.train) {
    if (img.label) {
      if (*img.label < 0 || *img.label >= cfg.data_classes)
        throw ConfigError("imported label " + std::to_string(*img.label) +
                          " outside data.classes");
      ds.test.push_back(img);
    }
  }
  return ds;
}

std::string default_run_id(const CliArgs& args, const TrainConfig& cfg) {
  if (!args.run_id.empty()) return args.run_id;
  return args.command + "-" + cfg.preset + "-seed" + std::to_string(cfg.seed);
}

void append_results_csv(const MetricsRow& row, const fs::path& dir) {
  const fs::path path = dir / "results.csv";
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot write results: " + path.string());
  if (fresh) out << "run_id,mode,epoch,top1,loss\n";
  out << row.run_id << "," << row.mode << "," << row.epoch << ","
      << detail::fmt_double(row.top1) << "," << detail::fmt_double(row.loss) << "\n";
  std::cout << row.run_id << " " << row.mode << ": top1 " << row.top1 << "% (epoch "
            << row.epoch << ", loss " << row.loss << ")\n";
}

TrainState<float> run_pretrain(const TrainConfig& cfg, const Dataset& ds,
                               const CliArgs& args, const fs::path& out,
                               std::vector<StepMetrics>* metrics_out = nullptr) {
  Codebook<float> cb;
  if (!args.tokenizer.empty()) {
    cb = load_codebook(args.tokenizer);
    if (cb.dim() != cfg.tokenizer_dim_resolved())
      throw ConfigError("tokenizer dim " + std::to_string(cb.dim()) +
                        " does not match config");
  } else {
    cb = fit_tokenizer<float>(cfg, ds.train);
  }
  TrainState<float> st = init_train_state(cfg, std::move(cb));
  auto hook = [&](int epoch, const TrainState<float>& s) {
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs) {
      save_checkpoint(cfg, s, (out / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".ckpt"))
                                  .string());
    }
  };
  std::vector<StepMetrics> metrics =
      pretrain<float>(st, ds, cfg, hook);
  write_metrics_csv(metrics, (out / "metrics.csv").string());
  save_checkpoint(cfg, st, (out / "checkpoint.ckpt").string());
  if (metrics_out) *metrics_out = std::move(metrics);
  return st;
}

int cmd_tokenizer_fit(const CliArgs& args) {
  const TrainConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  const Dataset ds = load_dataset(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const Codebook<float> cb = fit_tokenizer<float>(cfg, ds.train);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path path = out / "codebook.ckpt";
  save_codebook(cfg, cb, path.string());
  std::cout << "fitted codebook: V=" << cb.vocab() << " d_tok=" << cb.dim() << " from "
            << ds.train.size() << " images in " << secs << " s -> " << path.string() << "\n";
  return 0;
}

int cmd_pretrain(const CliArgs& args) {
  const TrainConfig cfg = load_config(args);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  const Dataset ds = load_dataset(cfg);
  std::vector<StepMetrics> metrics;
  const auto t0 = std::chrono::steady_clock::now();
  run_pretrain(cfg, ds, args, out, &metrics);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "pretrained " << metrics.size() << " steps (" << cfg.loss_mode
            << " loss) in " << secs << " s; first loss " << metrics.front().loss
            << ", last loss " << metrics.back().loss << "\n"
            << "wrote " << (out / "metrics.csv").string() << " and "
            << (out / "checkpoint.ckpt").string() << "\n";
  return 0;
}

int cmd_probe(const CliArgs& args) {
  if (args.checkpoint.empty()) throw ConfigError("probe requires --checkpoint");
  const LoadedCheckpoint loaded = load_checkpoint(args.checkpoint);
  const TrainConfig cfg = config_from_checkpoint(loaded.cfg, args);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  const Dataset ds = load_dataset(cfg);
  MetricsRow row =
      linear_probe(loaded.state.params, ds, cfg.probe_epochs, cfg.probe_lr, cfg.seed);
  row.run_id = default_run_id(args, cfg);
  append_results_csv(row, out);
  return 0;
}

int cmd_finetune(const CliArgs& args) {
  if (args.checkpoint.empty()) throw ConfigError("finetune requires --checkpoint");
  LoadedCheckpoint loaded = load_checkpoint(args.checkpoint);
  const TrainConfig cfg = config_from_checkpoint(loaded.cfg, args);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  const Dataset ds = load_dataset(cfg);
  MetricsRow row = fine_tune(loaded.state.params, ds, FinetuneOptions::from_config(cfg));
  row.run_id = default_run_id(args, cfg);
  append_results_csv(row, out);
  return 0;
}

struct AblateRun {
  std::string value;                       // CSV value column
  std::vector<std::pair<std::string, std::string>> keys;  // config overrides
};

std::vector<AblateRun> ablate_runs(const std::string& axis, const std::string& values) {
  std::vector<std::string> items;
  if (!values.empty()) {
    std::string cur;
    for (char ch : values + ",") {
      if (ch == ',') {
        if (!cur.empty()) items.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
  }
  std::vector<AblateRun> runs;
  if (axis == "tau") {
    if (items.empty()) items = {"0.1", "1", "4", "10"};
    for (const auto& v : items) runs.push_back({v, {{"target.tau", v}}});
    runs.push_back({"single-choice", {{"loss.mode", "hard"}}});
  } else if (axis == "omega") {
    if (items.empty()) items = {"0", "0.2", "0.4", "0.6", "0.8", "1"};
    for (const auto& v : items) runs.push_back({v, {{"target.omega", v}}});
  } else if (axis == "mask") {
    if (items.empty())
      items = {"block:0.45", "block:0.6",  "block:0.75",  "block:0.9",
               "random:0.45", "random:0.6", "random:0.75", "random:0.9"};
    for (const auto& v : items) {
      const size_t colon = v.find(':');
      if (colon == std::string::npos)
        throw ConfigError("mask sweep values use strategy:ratio, got '" + v + "'");
      runs.push_back({v,
                      {{"mask.strategy", v.substr(0, colon)},
                       {"mask.ratio", v.substr(colon + 1)}}});
    }
  } else {
    throw ConfigError("ablate axis must be tau, omega or mask");
  }
  return runs;
}

int cmd_ablate(const CliArgs& args) {
  if (args.axis.empty()) throw ConfigError("ablate requires --axis");
  const TrainConfig base = load_config(args);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  const std::vector<AblateRun> runs = ablate_runs(args.axis, args.values);

  const fs::path csv_path = out / ("ablate_" + args.axis + ".csv");
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << "axis,value,top1,final_loss\n";
  for (const AblateRun& run : runs) {
    std::string text;
    for (const auto& [k, v] : config_key_values(base))
      if (!v.empty()) text += k + " " + v + "\n";
    const TrainConfig cfg = parse_config_text(text, run.keys);
    // shared seed and identical data order across runs
    const Dataset ds = load_dataset(cfg);
    const fs::path run_dir = out / ("ablate_" + args.axis + "_" + run.value);
    fs::create_directories(run_dir);
    CliArgs sub = args;
    sub.tokenizer.clear();
    std::vector<StepMetrics> metrics;
    const TrainState<float> st = run_pretrain(cfg, ds, sub, run_dir, &metrics);
    const MetricsRow row =
        linear_probe(st.params, ds, cfg.probe_epochs, cfg.probe_lr, cfg.seed);
    csv << args.axis << "," << run.value << "," << detail::fmt_double(row.top1) << ","
        << detail::fmt_double(metrics.back().loss) << "\n";
    csv.flush();
    std::cout << args.axis << "=" << run.value << ": top1 " << row.top1 << "%, final loss "
              << metrics.back().loss << "\n";
  }
  std::cout << "wrote " << csv_path.string() << "\n";
  return 0;
}

int cmd_inspect_targets(const CliArgs& args) {
  if (args.checkpoint.empty()) throw ConfigError("inspect-targets requires --checkpoint");
  const LoadedCheckpoint loaded = load_checkpoint(args.checkpoint);
  const TrainConfig cfg = config_from_checkpoint(loaded.cfg, args);
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  const Dataset ds = load_dataset(cfg);
  if (args.index < 0 || args.index >= static_cast<int>(ds.test.size()))
    throw ConfigError("inspect-targets: index " + std::to_string(args.index) +
                      " out of range (test set has " + std::to_string(ds.test.size()) +
                      " images)");
  const Image& img = ds.test[args.index];
  const Arch& arch = loaded.state.params.arch;
  const PatchGrid pg = patchify(img, arch.patch);
  const Matrix<float> pm = pg.patches.cast<float>();
  const Matrix<float> z = encode_logits(pm, loaded.state.codebook);
  Rng rng(mix_seed(cfg.seed, 0x696e7370ULL, static_cast<uint64_t>(args.index)));
  const MaskSpec mask = sample_mask<float>(cfg, arch, rng);
  const ForwardCache<float> cache =
      vit_forward(loaded.state.params, embed_patches(loaded.state.params, pm, &mask));
  const TargetDistribution<float> targets = build_targets(
      z, cache.features, static_cast<float>(cfg.tau), static_cast<float>(cfg.omega));

  const std::string stem = "inspect_" + std::to_string(args.index);

  {  // hard token-id grid
    std::ofstream f(out / (stem + "_token_ids.csv"), std::ios::binary);
    const std::vector<int> ids = hard_ids(z);
    for (int y = 0; y < pg.rows; ++y) {
      for (int x = 0; x < pg.cols; ++x)
        f << ids[y * pg.cols + x] << (x + 1 < pg.cols ? "," : "");
      f << "\n";
    }
  }
  {  // top-3 multi-choice ids with probabilities
    std::ofstream f(out / (stem + "_top3.csv"), std::ios::binary);
    f << "patch,id1,p1,id2,p2,id3,p3\n";
    for (int i = 0; i < targets.z_hat.rows; ++i) {
      std::vector<int> order(targets.z_hat.cols);
      for (int k = 0; k < targets.z_hat.cols; ++k) order[k] = k;
      std::partial_sort(order.begin(), order.begin() + 3, order.end(), [&](int a, int b) {
        if (targets.z_hat(i, a) != targets.z_hat(i, b))
          return targets.z_hat(i, a) > targets.z_hat(i, b);
        return a < b;
      });
      f << i;
      for (int t = 0; t < 3; ++t)
        f << "," << order[t] << ","
          << detail::fmt_double(static_cast<double>(targets.z_hat(i, order[t])));
      f << "\n";
    }
  }
  {  // affinity heatmap + features for recomputation
    const int n = targets.affinity.rows;
    std::vector<double> w(static_cast<size_t>(n) * n);
    double maxw = 0;
    for (size_t i = 0; i < w.size(); ++i) {
      w[i] = static_cast<double>(targets.affinity.data[i]);
      maxw = std::max(maxw, w[i]);
    }
    write_pgm_scaled(w, n, n, maxw, (out / (stem + "_affinity.pgm")).string());
    std::ofstream f(out / (stem + "_features.csv"), std::ios::binary);
    for (int i = 0; i < cache.features.rows; ++i) {
      for (int j = 0; j < cache.features.cols; ++j)
        f << detail::fmt_double(static_cast<double>(cache.features(i, j)))
          << (j + 1 < cache.features.cols ? "," : "");
      f << "\n";
    }
  }
  {  // masked-patch entropy summary
    std::ofstream f(out / (stem + "_summary.txt"), std::ios::binary);
    double sum = 0, mn = 1e300, mx = -1e300;
    for (int i : mask.masked) {
      const double h =
          static_cast<double>(row_entropy(targets.z_hat.row(i), targets.z_hat.cols));
      sum += h;
      mn = std::min(mn, h);
      mx = std::max(mx, h);
    }
    f << "image " << args.index << "\n";
    f << "masked " << mask.count() << " of " << pg.count() << " patches ("
      << cfg.mask_strategy << " @ " << cfg.mask_ratio << ")\n";
    f << "tau " << cfg.tau << " omega " << cfg.omega << "\n";
    f << "z_hat entropy over masked patches: mean " << sum / mask.count() << " min " << mn
      << " max " << mx << " nats\n";
  }
  std::cout << "wrote " << (out / stem).string() << "_{token_ids,top3,features}.csv, "
            << stem << "_affinity.pgm, " << stem << "_summary.txt\n";
  return 0;
}

int cmd_grad_check(const CliArgs& args) {
  const TrainConfig cfg = load_config(args);
  const std::string mode = args.mode.empty() ? "both" : args.mode;
  bool ok = true;
  auto report = [&](const char* label, const GradCheckReport& r, double threshold) {
    std::cout << label << ": max relative error " << r.max_rel_error << " (threshold "
              << threshold << ", " << r.seconds << " s)\n";
    for (const GradCheckBlock& b : r.blocks)
      if (b.rel_error == r.max_rel_error)
        std::cout << "  worst block: " << b.name << "\n";
    ok = ok && r.max_rel_error < threshold;
  };
  if (mode == "f64" || mode == "both")
    report("float64", run_grad_check<double>(cfg), 1e-6);
  if (mode == "f32" || mode == "both")
    report("float32", run_grad_check<float>(cfg), 1e-4);
  if (mode != "f64" && mode != "f32" && mode != "both")
    throw ConfigError("--mode must be f32, f64 or both");
  std::cout << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 5;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    if (argc >= 2 && (std::string(argv[1]) == "--help" || std::string(argv[1]) == "-h")) {
      print_usage();
      return 0;
    }
    const CliArgs args = parse_cli(argc, argv);
    if (args.command == "tokenizer-fit") return cmd_tokenizer_fit(args);
    if (args.command == "pretrain") return cmd_pretrain(args);
    if (args.command == "probe") return cmd_probe(args);
    if (args.command == "finetune") return cmd_finetune(args);
    if (args.command == "ablate") return cmd_ablate(args);
    if (args.command == "inspect-targets") return cmd_inspect_targets(args);
    if (args.command == "grad-check") return cmd_grad_check(args);
    print_usage();
    throw ConfigError("unknown command: " + args.command);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 4;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
