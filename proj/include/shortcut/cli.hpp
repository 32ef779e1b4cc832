#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <utility>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "shortcut/cnn.hpp"
#include "shortcut/dataset.hpp"
#include "shortcut/pertfile.hpp"
#include "shortcut/poison.hpp"
#include "shortcut/probe.hpp"
#include "shortcut/synth.hpp"
#include "shortcut/train.hpp"
#include "shortcut/tsne.hpp"

namespace shortcut {

// Usage or validation failure; carries the process exit code (2).
struct CliError : std::runtime_error {
  int exit_code;
  CliError(int code, const std::string& msg) : std::runtime_error(msg), exit_code(code) {}
};

struct Command {
  std::string verb;       // generate|poison|probe|train|embed|bench|ablate|help
  std::string help_text;  // set when verb == "help"
  std::string config_file;

  // shared
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;

  // generation geometry
  int k = 10;
  long long n = 5000;  // total sample count, spread evenly over classes
  int w = 32, h = 32, c = 3;
  int p = 8;
  std::string eps = "6/255";
  double side_scale = 6.0;
  bool no_padding = false;
  int ppm = 0;

  // data selection
  std::string data = "shapes";  // shapes|cifar
  std::string cifar_dir = "cifar-10-batches-bin";
  int n_per_class = 500;
  int test_per_class = 200;
  long long limit = 0;  // cap on training images (balanced per class), 0 = all

  // poisoning regime
  std::string poison_mode = "none";  // none|full|classes|fraction
  std::string perts_path;
  std::vector<int> classes;
  double fraction = 1.0;
  bool quantize = false;

  // training
  int epochs = 30;
  int batch = 128;
  double lr = 0.05;
  double momentum = 0.9;
  std::vector<int> decay = {15, 22};
  int crop_pad = 4;
  bool no_flip = false;
  int cutout = 0;
  double mixup = 0.0;

  // probe
  int steps = 50;
  int width = 30;
  bool no_control = false;

  // embed
  double perplexity = 30.0;
  int iters = 1000;
  bool control = false;

  // bench
  std::vector<long long> n_list = {10000, 40000, 50000};
  std::vector<int> p_list = {4, 8};

  std::string out_prefix = "ablate";
};

namespace detail {

// Accepts "a/b" fractions (the natural way to write pixel budgets) and
// plain decimals.
inline double parse_eps(const std::string& text) {
  try {
    const auto slash = text.find('/');
    double value;
    std::size_t used = 0;
    if (slash == std::string::npos) {
      value = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
    } else {
      std::size_t used2 = 0;
      const double num = std::stod(text.substr(0, slash), &used);
      const double den = std::stod(text.substr(slash + 1), &used2);
      if (used != slash || used2 != text.size() - slash - 1 || den == 0.0) {
        throw std::invalid_argument(text);
      }
      value = num / den;
    }
    if (!(value > 0.0)) throw std::invalid_argument(text);
    return value;
  } catch (const std::exception&) {
    throw CliError(2, "invalid --eps value '" + text + "' (use a decimal or a/b)");
  }
}

inline std::string trim_ws(const std::string& s) {
  const auto l = s.find_first_not_of(" \t\r");
  if (l == std::string::npos) return "";
  const auto r = s.find_last_not_of(" \t\r");
  return s.substr(l, r - l + 1);
}

// Line-based `key = value` config with '#' comment lines, order preserved.
inline std::vector<std::pair<std::string, std::string>> read_config_entries(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliError(2, "cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim_ws(line);
    if (body.empty() || body[0] == '#') continue;
    const auto eq = body.find('=');
    const std::string key = eq == std::string::npos ? "" : trim_ws(body.substr(0, eq));
    if (key.empty()) {
      throw CliError(2, path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    entries.emplace_back(key, trim_ws(body.substr(eq + 1)));
  }
  return entries;
}

inline SynthConfig synth_config_from(const Command& cmd) {
  SynthConfig cfg;
  cfg.k = cmd.k;
  cfg.counts.resize(static_cast<std::size_t>(cmd.k));
  const long long base = cmd.n / cmd.k, extra = cmd.n % cmd.k;
  for (int i = 0; i < cmd.k; ++i) {
    cfg.counts[static_cast<std::size_t>(i)] = static_cast<int>(base + (i < extra ? 1 : 0));
  }
  cfg.w = cmd.w;
  cfg.h = cmd.h;
  cfg.c = cmd.c;
  cfg.p = cmd.p;
  cfg.eps_prime = parse_eps(cmd.eps);
  cfg.side_scale = cmd.side_scale;
  cfg.seed = cmd.seed;
  cfg.padding_enabled = !cmd.no_padding;
  cfg.threads = cmd.threads;
  cfg.validate();
  return cfg;
}

// Min-max scaled PPM snapshots of the first `count` samples, written next to
// `stem` as stem.0.ppm, stem.1.ppm, ...
inline void export_pert_ppms(const PerturbationSet& perts, const std::string& stem,
                             int count) {
  const std::size_t dim = perts.sample_dim();
  for (int i = 0; i < count && static_cast<std::size_t>(i) < perts.n(); ++i) {
    const auto sample = perts.sample(static_cast<std::size_t>(i));
    float lo = sample[0], hi = sample[0];
    for (float v : sample) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const float span = hi - lo;
    std::vector<float> scaled(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      scaled[j] = span > 0.0f ? (sample[j] - lo) / span : 0.5f;
    }
    export_ppm(scaled, perts.c, perts.h, perts.w, stem + "." + std::to_string(i) + ".ppm");
  }
}

inline std::pair<LabeledImageSet, LabeledImageSet> load_datasets(const Command& cmd) {
  if (cmd.data == "shapes") {
    const Prng root(cmd.seed);
    return {gen_shapes_dataset(root.substream("shapes-train"), cmd.n_per_class),
            gen_shapes_dataset(root.substream("shapes-test"), cmd.test_per_class)};
  }
  if (cmd.data == "cifar") {
    auto [train, test] = load_cifar10(cmd.cifar_dir);
    if (cmd.limit > 0 && cmd.limit < static_cast<long long>(train.n())) {
      // balanced prefix: first limit/k images of each class in file order
      const std::size_t per_class = static_cast<std::size_t>(cmd.limit) /
                                    static_cast<std::size_t>(train.k);
      std::vector<std::size_t> counts(static_cast<std::size_t>(train.k), 0);
      std::vector<std::size_t> keep;
      for (std::size_t i = 0; i < train.n(); ++i) {
        if (counts[train.labels[i]] < per_class) {
          ++counts[train.labels[i]];
          keep.push_back(i);
        }
      }
      train = subset(train, keep);
    }
    return {std::move(train), std::move(test)};
  }
  throw CliError(2, "unknown --data '" + cmd.data + "' (use shapes or cifar)");
}

struct PoisonOutcome {
  LabeledImageSet data;
  std::size_t poisoned = 0;
};

inline PoisonOutcome apply_poison(const LabeledImageSet& data, const Command& cmd) {
  PoisonOutcome out;
  if (cmd.poison_mode == "none") {
    out.data = data;
    return out;
  }
  if (cmd.perts_path.empty()) {
    throw CliError(2, "--poison " + cmd.poison_mode + " requires --perts");
  }
  const PerturbationSet perts = load_perts(cmd.perts_path);
  if (cmd.poison_mode == "full") {
    out.data = apply_full(data, perts);
    out.poisoned = data.n();
  } else if (cmd.poison_mode == "classes") {
    const std::set<int> ids(cmd.classes.begin(), cmd.classes.end());
    out.data = apply_classes(data, perts, ids);
    for (std::uint16_t label : data.labels) {
      if (ids.count(static_cast<int>(label)) != 0) ++out.poisoned;
    }
  } else if (cmd.poison_mode == "fraction") {
    Prng prng = Prng(cmd.seed).substream("poison-fraction");
    FractionResult res = apply_fraction(data, perts, cmd.fraction, prng);
    out.poisoned = res.poisoned_indices.size();
    out.data = std::move(res.data);
  } else {
    throw CliError(2, "unknown --poison mode '" + cmd.poison_mode + "'");
  }
  if (cmd.quantize) out.data = quantize_8bit(out.data);
  return out;
}

inline TrainConfig train_config_from(const Command& cmd) {
  TrainConfig cfg;
  cfg.epochs = cmd.epochs;
  cfg.batch_size = cmd.batch;
  cfg.lr = cmd.lr;
  cfg.momentum = cmd.momentum;
  cfg.decay_epochs = cmd.decay;
  cfg.augment.crop_pad = cmd.crop_pad;
  cfg.augment.flip = !cmd.no_flip;
  cfg.augment.cutout = cmd.cutout;
  cfg.augment.mixup_alpha = cmd.mixup;
  cfg.seed = cmd.seed;
  return cfg;
}

inline void write_probe_csv(const std::string& path, const ProbeReport& linear,
                            const ProbeReport& two_layer, const ProbeReport* control) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "model,train_accuracy,final_loss,steps\n";
  char line[160];
  auto row = [&](const std::string& name, const ProbeReport& r) {
    std::snprintf(line, sizeof(line), "%s,%.17g,%.17g,%d\n", name.c_str(), r.train_accuracy,
                  r.final_loss, r.steps);
    out << line;
  };
  row("linear", linear);
  row("two_layer", two_layer);
  if (control) row("linear_shuffled", *control);
  if (!out) throw std::runtime_error("cannot write " + path);
}

struct BenchRow {
  long long n = 0;
  int p = 0;
  int d = 0;
  double seconds = 0.0;
};

}  // namespace detail

// Times synthesize for every (n, p) pair: one warm-up run, then the median
// of three timed runs.
inline std::vector<detail::BenchRow> bench_generation(const std::vector<long long>& n_list,
                                                      const std::vector<int>& p_list,
                                                      int c, int h, int w, double eps_prime) {
  if (n_list.empty() || p_list.empty()) {
    throw std::invalid_argument("bench_generation: lists must be nonempty");
  }
#ifdef __GLIBC__
  // Keep freed output buffers in the arena instead of returning them to the
  // kernel: otherwise every timed run re-faults hundreds of MB of pages and
  // that constant swamps the generation scaling the warm-up run exists to
  // isolate.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  std::vector<detail::BenchRow> rows;
  for (long long n : n_list) {
    for (int p : p_list) {
      SynthConfig cfg;
      cfg.k = 10;
      cfg.counts.assign(10, static_cast<int>(n / 10));
      for (int i = 0; i < static_cast<int>(n % 10); ++i) ++cfg.counts[static_cast<std::size_t>(i)];
      cfg.c = c;
      cfg.h = h;
      cfg.w = w;
      cfg.p = p;
      cfg.eps_prime = eps_prime;
      cfg.seed = 1;
      cfg.validate();
      std::size_t expected = 0;
      for (int v : cfg.counts) expected += static_cast<std::size_t>(v);
      auto once = [&cfg, expected]() {
        const auto t0 = std::chrono::steady_clock::now();
        const PerturbationSet perts = synthesize(cfg);
        const auto t1 = std::chrono::steady_clock::now();
        if (perts.n() != expected) {
          throw std::runtime_error("bench_generation: unexpected sample count");
        }
        return std::chrono::duration<double>(t1 - t0).count();
      };
      once();  // warm-up
      double a = once(), b = once(), m = once();
      double mid = std::max(std::min(a, b), std::min(std::max(a, b), m));
      rows.push_back({n, p, c * h * w, mid});
    }
  }
  return rows;
}

namespace detail {

inline int run_generate(const Command& cmd) {
  const SynthConfig cfg = synth_config_from(cmd);
  const PerturbationSet perts = synthesize(cfg);
  save_perts(perts, cmd.out);
  if (cmd.ppm > 0) export_pert_ppms(perts, cmd.out, cmd.ppm);
  std::printf("generate: wrote %zu perturbations (%dx%dx%d, p=%d, radius %.5f) to %s\n",
              perts.n(), cfg.c, cfg.h, cfg.w, cfg.p, perts.norm_radius, cmd.out.c_str());
  return 0;
}

inline int run_poison(const Command& cmd) {
  auto [train, test] = load_datasets(cmd);
  (void)test;
  const PoisonOutcome outcome = apply_poison(train, cmd);
  save_labeled_bytes(outcome.data, cmd.out);
  if (cmd.ppm > 0) {
    for (int i = 0; i < cmd.ppm && static_cast<std::size_t>(i) < outcome.data.n(); ++i) {
      export_ppm(outcome.data.image(static_cast<std::size_t>(i)), outcome.data.c,
                 outcome.data.h, outcome.data.w, cmd.out + "." + std::to_string(i) + ".ppm");
    }
  }
  std::printf("poison: %s regime, %zu/%zu samples perturbed, wrote %s\n",
              cmd.poison_mode.c_str(), outcome.poisoned, outcome.data.n(), cmd.out.c_str());
  return 0;
}

inline int run_probe(const Command& cmd) {
  Matrix features(0, 0);
  std::vector<int> labels;
  int k = 0;
  if (!cmd.perts_path.empty()) {
    const PerturbationSet perts = load_perts(cmd.perts_path);
    features = prepare_features(perts);
    labels = labels_as_int(perts.labels);
    for (int label : labels) k = std::max(k, label + 1);
  } else {
    Command data_cmd = cmd;
    if (cmd.data == "shapes") data_cmd.n_per_class = cmd.n_per_class;
    auto [train, test] = load_datasets(data_cmd);
    (void)test;
    features = prepare_features(train);
    labels.assign(train.labels.begin(), train.labels.end());
    k = train.k;
  }
  const ProbeReport linear = fit_linear(features, labels, k, cmd.steps, cmd.seed);
  const ProbeReport two_layer =
      fit_two_layer(features, labels, k, cmd.width, cmd.steps, cmd.seed);
  ProbeReport control;
  if (!cmd.no_control) {
    Prng prng = Prng(cmd.seed).substream("probe-control");
    control = shuffled_label_control(features, labels, k, prng, cmd.steps);
  }
  write_probe_csv(cmd.out, linear, two_layer, cmd.no_control ? nullptr : &control);
  std::printf("probe: n=%zu d=%zu linear %.2f%%, two-layer %.2f%%", features.rows,
              features.cols, linear.train_accuracy, two_layer.train_accuracy);
  if (!cmd.no_control) std::printf(", shuffled control %.2f%%", control.train_accuracy);
  std::printf(", wrote %s\n", cmd.out.c_str());
  return 0;
}

inline int run_train(const Command& cmd) {
  auto [train_set, test_set] = load_datasets(cmd);
  const PoisonOutcome outcome = apply_poison(train_set, cmd);
  ArchConfig arch;
  arch.in_channels = train_set.c;
  arch.in_h = train_set.h;
  arch.in_w = train_set.w;
  arch.k = train_set.k;
  CnnModel model = build_small_cnn(arch, Prng(cmd.seed).substream("model-init").key());
  const TrainConfig cfg = train_config_from(cmd);
  const TrainRun run = train(model, outcome.data, test_set, cfg);
  write_train_csv(run, cmd.out);
  std::printf("train: final clean-test accuracy %.2f%% (%d epochs, %.1f s, %zu/%zu poisoned), "
              "wrote %s\n",
              run.final_test_accuracy, cfg.epochs, run.wall_time, outcome.poisoned,
              outcome.data.n(), cmd.out.c_str());
  return 0;
}

inline int run_embed(const Command& cmd) {
  PerturbationSet perts = load_perts(cmd.perts_path);
  if (!cmd.classes.empty()) {
    const std::set<int> wanted(cmd.classes.begin(), cmd.classes.end());
    PerturbationSet filtered;
    filtered.c = perts.c;
    filtered.h = perts.h;
    filtered.w = perts.w;
    filtered.norm_radius = perts.norm_radius;
    filtered.provenance = perts.provenance;
    for (std::size_t i = 0; i < perts.n(); ++i) {
      if (wanted.count(static_cast<int>(perts.labels[i])) == 0) continue;
      const auto sample = perts.sample(i);
      filtered.data.insert(filtered.data.end(), sample.begin(), sample.end());
      filtered.labels.push_back(perts.labels[i]);
    }
    perts = std::move(filtered);
  }
  Matrix features = prepare_features(perts);
  if (cmd.control) {
    // Label-matched unit-norm Gaussian rows: the "no structure" reference.
    Prng noise = Prng(cmd.seed).substream("embed-control");
    for (std::size_t i = 0; i < features.rows; ++i) {
      auto row = features.row(i);
      double sq = 0.0;
      for (double& v : row) {
        v = noise.next_normal();
        sq += v * v;
      }
      const double inv = 1.0 / std::sqrt(sq);
      for (double& v : row) v *= inv;
    }
  }
  const std::vector<int> labels = labels_as_int(perts.labels);
  Prng prng(cmd.seed);
  const Embedding embedding = tsne_embed(features, labels, cmd.perplexity, cmd.iters, prng);
  write_embedding_csv(embedding, cmd.out);
  const double score = silhouette(embedding.points, embedding.labels);
  std::printf("embed: n=%zu silhouette %.4f final KL %.4f, wrote %s\n", embedding.points.rows,
              score, embedding.kl_trace.back(), cmd.out.c_str());
  return 0;
}

inline int run_bench(const Command& cmd) {
  const double eps_prime = parse_eps(cmd.eps);
  const auto rows = bench_generation(cmd.n_list, cmd.p_list, cmd.c, cmd.h, cmd.w, eps_prime);
  std::ofstream out(cmd.out);
  if (!out) throw std::runtime_error("cannot open " + cmd.out + " for writing");
  out << "n,p,d,seconds\n";
  char line[96];
  for (const auto& row : rows) {
    std::snprintf(line, sizeof(line), "%lld,%d,%d,%.6f\n", row.n, row.p, row.d, row.seconds);
    out << line;
  }
  if (!out) throw std::runtime_error("cannot write " + cmd.out);
  std::printf("bench: %zu configurations, wrote %s\n", rows.size(), cmd.out.c_str());
  return 0;
}

// Padded vs unpadded perturbations under identical crop+flip training.
inline int run_ablate(const Command& cmd) {
  Command gen = cmd;
  gen.n = static_cast<long long>(cmd.n_per_class) * cmd.k;
  SynthConfig padded_cfg = synth_config_from(gen);
  SynthConfig nopad_cfg = padded_cfg;
  nopad_cfg.padding_enabled = false;

  auto [train_set, test_set] = load_datasets(cmd);
  ArchConfig arch;
  arch.in_channels = train_set.c;
  arch.in_h = train_set.h;
  arch.in_w = train_set.w;
  arch.k = train_set.k;
  const TrainConfig cfg = train_config_from(cmd);

  double finals[2] = {0.0, 0.0};
  const char* names[2] = {"padded", "nopad"};
  const SynthConfig* cfgs[2] = {&padded_cfg, &nopad_cfg};
  for (int variant = 0; variant < 2; ++variant) {
    const PerturbationSet perts = synthesize(*cfgs[variant]);
    const LabeledImageSet poisoned = apply_full(train_set, perts);
    CnnModel model = build_small_cnn(arch, Prng(cmd.seed).substream("model-init").key());
    const TrainRun run = train(model, poisoned, test_set, cfg);
    write_train_csv(run, cmd.out_prefix + "_" + names[variant] + ".csv");
    finals[variant] = run.final_test_accuracy;
  }
  std::printf("ablate: padded %.2f%% vs no-padding %.2f%% final clean-test accuracy, wrote "
              "%s_padded.csv %s_nopad.csv\n",
              finals[0], finals[1], cmd.out_prefix.c_str(), cmd.out_prefix.c_str());
  return 0;
}

}  // namespace detail

// Builds the verb table and parses (but does not run) an argument list.
// Throws CliError with exit code 2 on usage errors.
inline Command parse(const std::vector<std::string>& args) {
  Command cmd;
  CLI::App app{"Shortcut perturbation toolkit: generate linearly separable "
               "perturbations, poison datasets, and measure the damage"};
  app.require_subcommand(0, 1);
  // Long-only help: the default -h short flag would shadow --h (image height).
  app.set_help_flag("--help", "Print usage");
  auto add_verb = [&app](const std::string& name, const std::string& desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->set_help_flag("--help", "Print usage");
    return sub;
  };

  auto add_seed = [&cmd](CLI::App* sub) {
    sub->add_option("--seed", cmd.seed, "Root seed; all artifacts are bit-reproducible");
  };
  auto add_config = [&cmd](CLI::App* sub) {
    sub->add_option("--config", cmd.config_file,
                    "Config file with 'key = value' lines; flags override");
  };
  auto add_geometry = [&cmd](CLI::App* sub) {
    sub->add_option("--k", cmd.k, "Class count")->check(CLI::Range(2, 65535));
    sub->add_option("--w", cmd.w, "Image width")->check(CLI::Range(1, 4096));
    sub->add_option("--h", cmd.h, "Image height")->check(CLI::Range(1, 4096));
    sub->add_option("--c", cmd.c, "Channels")->check(CLI::Range(1, 16));
    sub->add_option("--p", cmd.p, "Patch size (p x p blocks)")->check(CLI::Range(1, 4096));
    sub->add_option("--eps", cmd.eps, "Per-pixel budget, decimal or a/b (default 6/255)");
    sub->add_option("--side-scale", cmd.side_scale,
                    "Hypercube half-side in coordinate-std units");
    sub->add_flag("--no-padding", cmd.no_padding, "Skip patch expansion (ablation variant)");
  };
  auto add_data = [&cmd](CLI::App* sub) {
    sub->add_option("--data", cmd.data, "Dataset: shapes or cifar")
        ->check(CLI::IsMember({"shapes", "cifar"}));
    sub->add_option("--cifar-dir", cmd.cifar_dir, "Directory with CIFAR-10 binary batches");
    sub->add_option("--n-per-class", cmd.n_per_class, "Shapes training images per class")
        ->check(CLI::Range(1, 100000));
    sub->add_option("--test-per-class", cmd.test_per_class, "Shapes test images per class")
        ->check(CLI::Range(1, 100000));
    sub->add_option("--limit", cmd.limit, "Cap training images (balanced per class)");
  };
  auto add_poison = [&cmd](CLI::App* sub) {
    sub->add_option("--poison", cmd.poison_mode, "Regime: none, full, classes, fraction")
        ->check(CLI::IsMember({"none", "full", "classes", "fraction"}));
    sub->add_option("--perts", cmd.perts_path, "Perturbation file");
    sub->add_option("--classes", cmd.classes, "Class ids for --poison classes")
        ->delimiter(',');
    sub->add_option("--fraction", cmd.fraction, "Poisoned fraction for --poison fraction")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_flag("--quantize", cmd.quantize, "Round poisoned images to 8-bit");
  };
  auto add_train = [&cmd](CLI::App* sub) {
    sub->add_option("--epochs", cmd.epochs, "Training epochs")->check(CLI::Range(1, 10000));
    sub->add_option("--batch", cmd.batch, "Batch size")->check(CLI::Range(1, 65536));
    sub->add_option("--lr", cmd.lr, "Base learning rate")
        ->check(CLI::Range(1e-9, 1e3));
    sub->add_option("--momentum", cmd.momentum, "SGD momentum")
        ->check(CLI::Range(0.0, 0.999999));
    sub->add_option("--decay", cmd.decay, "Epochs after which lr divides by 10")
        ->delimiter(',');
    sub->add_option("--crop-pad", cmd.crop_pad, "Random crop padding (0 disables)")
        ->check(CLI::Range(0, 16));
    sub->add_flag("--no-flip", cmd.no_flip, "Disable horizontal flips");
    sub->add_option("--cutout", cmd.cutout, "Cutout square side (0 disables)")
        ->check(CLI::Range(0, 4096));
    sub->add_option("--mixup", cmd.mixup, "Mixup alpha (0 disables)")
        ->check(CLI::Range(0.0, 100.0));
  };

  CLI::App* generate = add_verb("generate", "Synthesize a perturbation set");
  generate->add_option("--n", cmd.n, "Total sample count, spread evenly over classes")
      ->check(CLI::Range(1LL, 100000000LL));
  add_geometry(generate);
  generate->add_option("--threads", cmd.threads, "Worker threads")->check(CLI::Range(1, 256));
  generate->add_option("--out", cmd.out, "Output perturbation file")->required();
  generate->add_option("--ppm", cmd.ppm, "Export this many samples as PPM images");
  add_seed(generate);
  add_config(generate);

  CLI::App* poison = add_verb("poison", "Write a poisoned copy of a dataset");
  add_data(poison);
  add_poison(poison);
  poison->add_option("--out", cmd.out, "Output dataset (label byte + pixel bytes records)")
      ->required();
  poison->add_option("--ppm", cmd.ppm, "Export this many poisoned samples as PPM images");
  add_seed(poison);
  add_config(poison);

  CLI::App* probe = add_verb(
      "probe", "Fit linear and two-layer models on flattened unit-norm samples");
  probe->add_option("--perts", cmd.perts_path, "Perturbation file to probe");
  add_data(probe);
  probe->add_option("--steps", cmd.steps, "Optimizer steps")->check(CLI::Range(1, 100000));
  probe->add_option("--width", cmd.width, "Two-layer hidden width")
      ->check(CLI::Range(1, 100000));
  probe->add_flag("--no-control", cmd.no_control, "Skip the shuffled-label control fit");
  probe->add_option("--out", cmd.out, "Report CSV (default probe_report.csv)");
  add_seed(probe);
  add_config(probe);

  CLI::App* train = add_verb("train", "Train the small CNN and log the run");
  add_data(train);
  add_poison(train);
  add_train(train);
  train->add_option("--out", cmd.out,
                    "Per-epoch CSV (epoch,train_loss,test_acc; default train.csv)");
  add_seed(train);
  add_config(train);

  CLI::App* embed = add_verb("embed", "2-D embedding of a perturbation set");
  embed->add_option("--perts", cmd.perts_path, "Perturbation file")->required();
  embed->add_option("--classes", cmd.classes, "Keep only these class ids")->delimiter(',');
  embed->add_flag("--control", cmd.control,
                  "Replace samples with label-matched unit-norm Gaussian noise");
  embed->add_option("--perplexity", cmd.perplexity, "Target perplexity")
      ->check(CLI::Range(5.0, 1000.0));
  embed->add_option("--iters", cmd.iters, "Descent iterations")->check(CLI::Range(1, 100000));
  embed->add_option("--out", cmd.out, "Coordinates CSV (x,y,label; default embed.csv)");
  add_seed(embed);
  add_config(embed);

  CLI::App* bench = add_verb("bench", "Time perturbation generation");
  bench->add_option("--n-list", cmd.n_list, "Sample counts to time")->delimiter(',');
  bench->add_option("--p-list", cmd.p_list, "Patch sizes to time")->delimiter(',');
  bench->add_option("--w", cmd.w, "Image width")->check(CLI::Range(1, 4096));
  bench->add_option("--h", cmd.h, "Image height")->check(CLI::Range(1, 4096));
  bench->add_option("--c", cmd.c, "Channels")->check(CLI::Range(1, 16));
  bench->add_option("--eps", cmd.eps, "Per-pixel budget");
  bench->add_option("--out", cmd.out, "Timing CSV (n,p,d,seconds; default bench.csv)");
  add_config(bench);

  CLI::App* ablate =
      add_verb("ablate", "Train on padded vs unpadded poison under crop+flip");
  add_data(ablate);
  add_geometry(ablate);
  add_train(ablate);
  ablate->add_option("--out-prefix", cmd.out_prefix, "Prefix for the two run CSVs");
  add_seed(ablate);
  add_config(ablate);

  // Config handling is done by hand: keys become flags spliced in right after
  // the verb, and any key the command line already names is skipped, so
  // explicit flags override the file by construction.
  std::vector<std::string> merged = args;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    }
  }
  if (!config_path.empty() && !args.empty()) {
    CLI::App* sub = app.get_subcommand_no_throw(args.front());
    if (sub != nullptr) {
      std::set<std::string> given;
      for (const std::string& a : args) {
        if (a.rfind("--", 0) != 0) continue;
        const auto eq = a.find('=');
        given.insert(a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2));
      }
      std::vector<std::string> extra;
      for (const auto& [key, value] : detail::read_config_entries(config_path)) {
        if (key == "config" || given.count(key) != 0) continue;
        const CLI::Option* op = sub->get_option_no_throw("--" + key);
        if (op == nullptr) {
          throw CliError(2, config_path + ": unknown key '" + key + "' for verb '" +
                                args.front() + "'");
        }
        if (op->get_expected_min() == 0) {  // flag-style option
          std::string low = value;
          for (char& ch : low) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
          if (low == "true" || low == "1" || low == "yes" || low == "on") {
            extra.push_back("--" + key);
          } else if (low != "false" && low != "0" && low != "no" && low != "off") {
            throw CliError(2, config_path + ": flag '" + key + "' needs a boolean, got '" +
                                  value + "'");
          }
        } else {
          extra.push_back("--" + key);
          extra.push_back(value);
        }
      }
      merged.insert(merged.begin() + 1, extra.begin(), extra.end());
    }
  }

  std::vector<std::string> reversed(merged.rbegin(), merged.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    cmd.verb = "help";
    const auto subs = app.get_subcommands();
    cmd.help_text = subs.empty() ? app.help() : subs.front()->help();
    return cmd;
  } catch (const CLI::ParseError& e) {
    throw CliError(2, std::string(e.what()) + "\nRun with --help for usage.");
  }
  for (CLI::App* sub : app.get_subcommands()) cmd.verb = sub->get_name();
  if (cmd.verb.empty()) {
    cmd.verb = "help";
    cmd.help_text = app.help();
  }
  if (cmd.out.empty()) {
    // Per-verb report defaults; generate and poison keep --out required.
    if (cmd.verb == "probe") cmd.out = "probe_report.csv";
    if (cmd.verb == "train") cmd.out = "train.csv";
    if (cmd.verb == "embed") cmd.out = "embed.csv";
    if (cmd.verb == "bench") cmd.out = "bench.csv";
  }
  detail::parse_eps(cmd.eps);  // fail fast on malformed budgets
  return cmd;
}

inline int execute(const Command& cmd) {
  if (cmd.verb == "help") {
    std::fputs(cmd.help_text.c_str(), stdout);
    return 0;
  }
  if (cmd.verb == "generate") return detail::run_generate(cmd);
  if (cmd.verb == "poison") return detail::run_poison(cmd);
  if (cmd.verb == "probe") return detail::run_probe(cmd);
  if (cmd.verb == "train") return detail::run_train(cmd);
  if (cmd.verb == "embed") return detail::run_embed(cmd);
  if (cmd.verb == "bench") return detail::run_bench(cmd);
  if (cmd.verb == "ablate") return detail::run_ablate(cmd);
  throw CliError(2, "unknown verb '" + cmd.verb + "'");
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    const Command cmd = parse(args);
    return execute(cmd);
  } catch (const CliError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return e.exit_code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace shortcut
