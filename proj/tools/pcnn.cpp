// pcnn command-line front end. Every subcommand reads one config file,
// takes --seed and --out, and leaves resolved_config.toml plus
// manifest.json in the output directory next to its results.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pcnn/pcnn.hpp"

namespace fs = std::filesystem;
using namespace pcnn;

namespace {

// Independent seed streams derived from --seed.
enum SeedStream : std::uint64_t { init_stream = 1, train_stream, finetune_stream, filter_stream, fold_stream, kmeans_stream };

std::uint64_t derive(std::uint64_t seed, SeedStream s) { return splitmix64(seed ^ (0x9E3779B97F4A7C15ull * s)); }

struct Run {
  std::string command;
  Config config;
  std::uint64_t seed = 1;
  fs::path out;
  std::vector<std::string> outputs;

  fs::path output(const std::string& name) {
    outputs.push_back(name);
    return out / name;
  }

  void write_text(const std::string& name, const std::string& text) {
    std::ofstream os(output(name), std::ios::binary | std::ios::trunc);
    if (!os || !(os << text) || !os.flush()) fail(ErrorKind::io, "cannot write " + (out / name).string());
  }

  void write_with(const std::string& name, const std::function<void(std::ostream&)>& body) {
    std::ostringstream buf;
    body(buf);
    write_text(name, buf.str());
  }

  fs::path input_path(const std::string& key) {
    const std::string p = config.get_string(key, "");
    if (p.empty()) fail(ErrorKind::config, command + ": missing required key '" + key + "'");
    return p;
  }
};

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

TrainConfig read_train(Config& cfg, const std::string& section, const TrainConfig& base) {
  TrainConfig t = base;
  t.batch_size = cfg.get_count(section + ".batch_size", base.batch_size);
  t.iterations = cfg.get_count(section + ".iterations", base.iterations);
  t.learning_rate = cfg.get_real(section + ".learning_rate", base.learning_rate);
  t.lr_decay = cfg.get_real(section + ".lr_decay", base.lr_decay);
  t.decay_interval = cfg.get_count(section + ".decay_interval", base.decay_interval);
  t.momentum = cfg.get_real(section + ".momentum", base.momentum);
  t.weight_decay = cfg.get_real(section + ".weight_decay", base.weight_decay);
  t.log_interval = cfg.get_count(section + ".log_interval", base.log_interval);
  t.frozen_layers = cfg.get_count(section + ".frozen_layers", base.frozen_layers);
  t.validate();
  return t;
}

TrainConfig read_base_train(Run& r) {
  TrainConfig t = read_train(r.config, "train", TrainConfig{});
  t.seed = derive(r.seed, train_stream);
  return t;
}

TrainConfig read_finetune(Run& r, const TrainConfig& base) {
  TrainConfig defaults = base.fine_tune_schedule(base.iterations / 3);
  TrainConfig t = read_train(r.config, "finetune", defaults);
  t.seed = derive(r.seed, finetune_stream);
  return t;
}

Dataset load_data(Run& r, const std::string& key, std::size_t side) {
  Dataset d = load_manifest(r.input_path(key));
  materialize(d, side);
  return d;
}

std::optional<Dataset> load_optional(Run& r, const std::string& key, std::size_t side) {
  const std::string p = r.config.get_string(key, "");
  if (p.empty()) return std::nullopt;
  Dataset d = load_manifest(p);
  materialize(d, side);
  return d;
}

Checkpoint load_model(Run& r) { return load_checkpoint(r.input_path("model.checkpoint")); }

Checkpoint fresh_model(Run& r) {
  const std::string family = r.config.get_string("model.family", "2CONV-4FC");
  const Profile profile = parse_profile(r.config.get_string("model.profile", "desk"));
  Rng rng(derive(r.seed, init_stream));
  return build_architecture(family, profile, rng);
}

void write_scores_csv(std::ostream& os, const Dataset& d, const ScoreMatrix& s) {
  os << "id,s1,s2,predicted\n";
  const auto pred = predictions(s);
  for (std::size_t i = 0; i < d.size(); ++i) {
    os << d.samples[i].id << ',' << format_real(s.at(i, 0)) << ',' << format_real(s.at(i, 1)) << ',' << pred[i]
       << '\n';
  }
}

/// Reads the score CSV back in dataset order.
ScoreMatrix read_scores_csv(const fs::path& path, const Dataset& d) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::io, "cannot open scores " + path.string());
  std::string line;
  if (!std::getline(is, line) || line.rfind("id,s1,s2", 0) != 0) fail(ErrorKind::parse, path.string() + ": bad header");
  std::map<std::string, std::pair<double, double>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, a, b;
    if (!std::getline(ss, id, ',') || !std::getline(ss, a, ',') || !std::getline(ss, b, ',')) {
      fail(ErrorKind::parse, path.string() + " line " + std::to_string(lineno) + ": expected id,s1,s2");
    }
    const std::string ctx = path.string() + " line " + std::to_string(lineno);
    rows[id] = {detail::parse_real(a, ctx), detail::parse_real(b, ctx)};
  }
  if (rows.size() != d.size()) {
    fail(ErrorKind::data, path.string() + " has " + std::to_string(rows.size()) + " rows for " +
                              std::to_string(d.size()) + " samples");
  }
  ScoreMatrix s({d.size(), 2});
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto it = rows.find(d.samples[i].id);
    if (it == rows.end()) fail(ErrorKind::data, path.string() + " has no score for '" + d.samples[i].id + "'");
    s.at(i, 0) = it->second.first;
    s.at(i, 1) = it->second.second;
  }
  return s;
}

void write_reports(Run& r, const std::vector<MetricsReport>& reports, const std::string& stem = "report") {
  r.write_with(stem + ".csv", [&](std::ostream& os) { write_report(os, reports, ReportFormat::csv); });
  r.write_with(stem + ".json", [&](std::ostream& os) { write_report(os, reports, ReportFormat::json); });
}

void print_reports(const std::vector<MetricsReport>& reports) {
  write_report(std::cout, reports, ReportFormat::csv);
  for (const auto& rep : reports) {
    for (const auto& w : rep.warnings) std::cerr << "warning: " << rep.arm << '/' << rep.subset << ": " << w << '\n';
  }
}

/// Reports for the whole set or, when every sample has worker votes and
/// `agreement` is set, for the three agreement subsets.
std::vector<MetricsReport> evaluate_subsets(const Dataset& d, const std::string& arm, bool agreement,
                                            const std::function<ScoreMatrix(const Dataset&)>& score) {
  std::vector<MetricsReport> out;
  if (!agreement) {
    out.push_back(metrics(confusion(predictions(score(d)), d.labels()), arm, "all"));
    return out;
  }
  const AgreementSubsets subsets = aggregate_worker_labels(d);
  const std::pair<const char*, const Dataset*> named[] = {{"five_agree", &subsets.five_agree},
                                                          {"at_least_four", &subsets.at_least_four},
                                                          {"at_least_three", &subsets.at_least_three}};
  for (const auto& [name, set] : named) {
    if (set->empty()) fail(ErrorKind::data, std::string("agreement subset ") + name + " is empty");
    out.push_back(metrics(confusion(predictions(score(*set)), set->labels()), arm, name));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands.

void cmd_synth(Run& r) {
  SyntheticConfig sc;
  sc.count = r.config.get_count("synth.count", sc.count);
  sc.side = r.config.get_count("synth.side", sc.side);
  sc.signal = r.config.get_real("synth.signal", sc.signal);
  sc.noise_rate = r.config.get_real("synth.noise_rate", sc.noise_rate);
  sc.domain = parse_domain(r.config.get_string("synth.domain", "source"));
  sc.worker_votes = r.config.get_bool("synth.worker_votes", sc.worker_votes);
  sc.id_prefix = r.config.get_string("synth.id_prefix", sc.id_prefix);
  sc.pixel_noise = r.config.get_real("synth.pixel_noise", sc.pixel_noise);
  sc.seed = r.seed;
  r.config.reject_unused();
  Dataset d = generate_synthetic(sc);
  write_corpus(d, r.out);
  r.outputs.push_back("images/");
  r.write_with("dataset.jsonl", [&](std::ostream& os) { write_manifest(os, d); });
  std::size_t flipped = 0;
  for (const auto& s : d.samples) flipped += *s.label != *s.true_label;
  std::cout << "samples " << d.size() << " flipped " << flipped << '\n';
}

void cmd_train(Run& r) {
  Checkpoint c = fresh_model(r);
  const TrainConfig t = read_base_train(r);
  Dataset data = load_data(r, "data.manifest", c.spec.height);
  auto test = load_optional(r, "data.test_manifest", c.spec.height);
  r.config.reject_unused();
  TrainResult res = train(std::move(c), data, t, {test ? &*test : nullptr});
  save_checkpoint(res.checkpoint, r.output("model.ckpt"));
  r.write_with("history.csv", [&](std::ostream& os) { write_history_csv(os, res.history); });
  std::cout << "iterations " << res.checkpoint.iteration << " final_loss " << res.history.back().loss << '\n';
}

void cmd_score(Run& r) {
  const Checkpoint c = load_model(r);
  Dataset data = load_data(r, "data.manifest", c.spec.height);
  r.config.reject_unused();
  const ScoreMatrix s = score_dataset(c, data);
  r.write_with("scores.csv", [&](std::ostream& os) { write_scores_csv(os, data, s); });
  std::cout << "scored " << data.size() << '\n';
}

void print_filter_summary(const FilterOutcome& f) {
  std::printf("kept %zu removed %zu mean_margin %.6f\n", f.kept.size(), f.removed.size(), f.mean_margin());
}

void cmd_filter(Run& r) {
  const fs::path scores_path = r.input_path("filter.scores");
  Dataset data = load_manifest(r.input_path("data.manifest"));
  r.config.reject_unused();
  const ScoreMatrix s = read_scores_csv(scores_path, data);
  const FilterOutcome f = filter_training_set(data, s, derive(r.seed, filter_stream));
  r.write_with("filter.jsonl", [&](std::ostream& os) { write_filter_jsonl(os, data, f); });
  Dataset kept = data.subset(f.kept);
  r.write_with("kept_manifest.jsonl", [&](std::ostream& os) { write_manifest(os, kept); });
  print_filter_summary(f);
}

void cmd_pcnn(Run& r) {
  Checkpoint c = fresh_model(r);
  const TrainConfig t = read_base_train(r);
  const TrainConfig ft = read_finetune(r, t);
  ProgressiveOptions po;
  po.rounds = r.config.get_count("filter.rounds", 1);
  po.filter_seed = derive(r.seed, filter_stream);
  Dataset data = load_data(r, "data.manifest", c.spec.height);
  auto test = load_optional(r, "data.test_manifest", c.spec.height);
  const bool agreement = r.config.get_bool("eval.agreement", false);
  r.config.reject_unused();
  po.heldout = test ? &*test : nullptr;
  ProgressiveResult res = train_progressive(std::move(c), data, t, ft, po);
  save_checkpoint(res.cnn, r.output("cnn.ckpt"));
  save_checkpoint(res.pcnn, r.output("pcnn.ckpt"));
  r.write_with("history.csv", [&](std::ostream& os) { write_history_csv(os, res.history); });
  Dataset current = data;
  for (std::size_t round = 0; round < res.outcomes.size(); ++round) {
    const std::string name = "filter_round" + std::to_string(round + 1) + ".jsonl";
    r.write_with(name, [&](std::ostream& os) { write_filter_jsonl(os, current, res.outcomes[round]); });
    std::printf("round %zu: ", round + 1);
    print_filter_summary(res.outcomes[round]);
    current = data.subset(res.kept_original[round]);
  }
  if (test) {
    std::vector<MetricsReport> reports;
    for (const auto& [arm, model] : {std::pair<const char*, const Checkpoint*>{"CNN", &res.cnn}, {"PCNN", &res.pcnn}}) {
      auto rows = evaluate_subsets(*test, arm, agreement, [&](const Dataset& d) { return score_dataset(*model, d); });
      reports.insert(reports.end(), rows.begin(), rows.end());
    }
    write_reports(r, reports);
    print_reports(reports);
  }
}

void cmd_finetune(Run& r) {
  const Checkpoint c = load_model(r);
  const TrainConfig ft = read_finetune(r, read_base_train(r));
  Dataset data = load_data(r, "data.manifest", c.spec.height);
  r.config.reject_unused();
  TrainResult res = train(c, data, ft);
  save_checkpoint(res.checkpoint, r.output("model.ckpt"));
  r.write_with("history.csv", [&](std::ostream& os) { write_history_csv(os, res.history); });
  std::cout << "iterations " << res.checkpoint.iteration << '\n';
}

void cmd_transfer(Run& r) {
  const Checkpoint c = load_model(r);
  const TrainConfig ft = read_finetune(r, read_base_train(r));
  const std::size_t k = r.config.get_count("transfer.k", 5);
  const std::string arm = r.config.get_string("transfer.arm", "CNN");
  Dataset target = load_data(r, "data.manifest", c.spec.height);
  r.config.reject_unused();
  const TransferResult res = cross_domain_evaluate(c, target, k, ft, derive(r.seed, fold_stream), arm);

  std::vector<MetricsReport> reports = res.folds;
  reports.push_back(res.averaged);
  reports.push_back(res.micro);
  reports.push_back(metrics(confusion(predictions(score_dataset(c, target)), target.labels()), arm + "-untuned", "all"));
  write_reports(r, reports);
  r.write_with("predictions.csv", [&](std::ostream& os) {
    os << "id,fold,s1,s2,predicted,label\n";
    const auto pred = predictions(res.scores);
    for (std::size_t i = 0; i < target.size(); ++i) {
      os << target.samples[i].id << ',' << res.fold_of[i] + 1 << ',' << format_real(res.scores.at(i, 0)) << ','
         << format_real(res.scores.at(i, 1)) << ',' << pred[i] << ',' << *target.samples[i].label << '\n';
    }
  });
  r.write_with("folds.json", [&](std::ostream& os) {
    nlohmann::ordered_json j;
    j["k"] = res.plan.k;
    j["seed"] = res.plan.seed;
    nlohmann::ordered_json folds = nlohmann::ordered_json::array();
    for (const auto& f : res.plan.folds) {
      nlohmann::ordered_json ids = nlohmann::ordered_json::array();
      for (std::size_t i : f) ids.push_back(target.samples[i].id);
      folds.push_back(ids);
    }
    j["folds"] = folds;
    os << j.dump(2) << '\n';
  });
  print_reports(reports);
}

struct BaselineSettings {
  DescriptorParams descriptor;
  std::size_t codebook_size = 64;
  std::size_t kmeans_iters = 30;
  LinearConfig linear;
};

/// Features for one arm name: GCH, LCH, BoW, GCH+BoW or LCH+BoW.
FeatureVector arm_features(const std::string& arm, const Tensor& img, const Codebook* cb) {
  auto part = [&](const std::string& name) -> FeatureVector {
    if (name == "GCH") return gch(img);
    if (name == "LCH") return lch(img);
    if (name == "BoW") {
      if (!cb) fail(ErrorKind::config, "BoW arm needs a codebook");
      return bow(img, *cb);
    }
    fail(ErrorKind::config, "unknown baseline arm '" + name + "'");
  };
  const auto plus = arm.find('+');
  if (plus == std::string::npos) return part(arm);
  return concat(part(arm.substr(0, plus)), part(arm.substr(plus + 1)));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

MetricsReport run_baseline_arm(const std::string& arm, const Dataset& train_set, const Dataset& test_set,
                               const BaselineSettings& bs, std::uint64_t kmeans_seed, const std::string& subset,
                               Codebook* codebook_out) {
  std::optional<Codebook> cb;
  if (arm.find("BoW") != std::string::npos) {
    std::vector<std::vector<Descriptor>> sets;
    for (const auto& s : train_set.samples) sets.push_back(extract_descriptors(*s.pixels, bs.descriptor));
    cb = build_vocabulary(sets, bs.codebook_size, kmeans_seed, bs.kmeans_iters);
    cb->params = bs.descriptor;
    if (codebook_out) *codebook_out = *cb;
  }
  auto features = [&](const Dataset& d) {
    std::vector<FeatureVector> f;
    for (const auto& s : d.samples) f.push_back(arm_features(arm, *s.pixels, cb ? &*cb : nullptr));
    return feature_matrix(f);
  };
  const LinearModel m = train_linear(features(train_set), train_set.labels(), bs.linear);
  return metrics(confusion(predictions(predict_linear(m, features(test_set))), test_set.labels()), arm, subset);
}

void cmd_baseline(Run& r) {
  BaselineSettings bs;
  const std::size_t side = r.config.get_count("baseline.side", 32);
  const auto arms = split_list(r.config.get_string("baseline.arms", "GCH,LCH,BoW,GCH+BoW,LCH+BoW"));
  bs.descriptor.grid_step = r.config.get_count("baseline.grid_step", bs.descriptor.grid_step);
  bs.descriptor.patch_size = r.config.get_count("baseline.patch_size", bs.descriptor.patch_size);
  bs.codebook_size = r.config.get_count("baseline.codebook_size", bs.codebook_size);
  bs.kmeans_iters = r.config.get_count("baseline.kmeans_iters", bs.kmeans_iters);
  bs.linear.l2 = r.config.get_real("baseline.l2", bs.linear.l2);
  bs.linear.learning_rate = r.config.get_real("baseline.learning_rate", bs.linear.learning_rate);
  bs.linear.max_iters = r.config.get_count("baseline.max_iters", bs.linear.max_iters);
  bs.linear.tolerance = r.config.get_real("baseline.tolerance", bs.linear.tolerance);
  const std::size_t k = r.config.get_count("transfer.k", 5);
  Dataset data = load_data(r, "data.manifest", side);
  auto test = load_optional(r, "data.test_manifest", side);
  r.config.reject_unused();
  if (arms.empty()) fail(ErrorKind::config, "baseline.arms is empty");
  const std::uint64_t kseed = derive(r.seed, kmeans_stream);

  std::vector<MetricsReport> reports;
  Codebook codebook;
  bool have_codebook = false;
  for (const auto& arm : arms) {
    if (test) {
      Codebook cb;
      reports.push_back(run_baseline_arm(arm, data, *test, bs, kseed, "all", &cb));
      if (!have_codebook && cb.centroids.rank() == 2) {
        codebook = cb;
        have_codebook = true;
      }
      continue;
    }
    // k-fold cross-validation on the single data set
    const FoldPlan plan = partition_folds(data.size(), k, derive(r.seed, fold_stream));
    std::vector<MetricsReport> folds;
    for (std::size_t f = 0; f < k; ++f) {
      folds.push_back(run_baseline_arm(arm, data.subset(plan.training_indices(f)), data.subset(plan.folds[f]), bs,
                                       kseed, "fold" + std::to_string(f + 1), nullptr));
    }
    reports.push_back(average_reports(folds, arm, "all"));
  }
  if (have_codebook) {
    save_codebook(codebook, r.output("codebook.ntsr"));
    r.outputs.push_back("codebook.ntsr.json");
  }
  write_reports(r, reports);
  print_reports(reports);
}

void cmd_eval(Run& r) {
  const Checkpoint c = load_model(r);
  const std::string arm = r.config.get_string("eval.arm", "CNN");
  const bool agreement = r.config.get_bool("eval.agreement", false);
  Dataset data = load_manifest(r.input_path("data.manifest"));
  r.config.reject_unused();
  materialize(data, c.spec.height);
  const auto reports = evaluate_subsets(data, arm, agreement, [&](const Dataset& d) { return score_dataset(c, d); });
  write_reports(r, reports);
  if (!agreement) {
    r.write_with("predictions.csv", [&](std::ostream& os) { write_scores_csv(os, data, score_dataset(c, data)); });
  }
  print_reports(reports);
}

void cmd_report(Run& r) {
  const auto inputs = split_list(r.config.get_string("report.inputs", ""));
  r.config.reject_unused();
  if (inputs.empty()) fail(ErrorKind::config, "report.inputs lists no report files");
  std::vector<MetricsReport> all;
  for (const auto& in : inputs) {
    std::ifstream is(in);
    if (!is) fail(ErrorKind::io, "cannot open report " + in);
    const bool csv = fs::path(in).extension() == ".csv";
    auto rows = csv ? parse_report_csv(is) : parse_report_json(is);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  write_reports(r, all);
  r.write_with("table.csv", [&](std::ostream& os) { write_wide_table(os, all); });
  write_wide_table(std::cout, all);
}

void cmd_filters(Run& r) {
  const Checkpoint c = load_model(r);
  r.config.reject_unused();
  const GridLayout g = export_filter_grid(c, r.output("filters.ppm"));
  std::printf("tiles %zu columns %zu rows %zu image %zux%zu\n", c.spec.layers.front().outputs, g.columns, g.rows,
              g.width, g.height);
}

void cmd_rank(Run& r) {
  const Checkpoint c = load_model(r);
  const std::size_t n = r.config.get_count("rank.n", 5);
  Dataset data = load_data(r, "data.manifest", c.spec.height);
  r.config.reject_unused();
  const RankResult res = rank_extremes(score_dataset(c, data), data, n);
  r.write_with("rank.json", [&](std::ostream& os) { write_rank_json(os, res); });
  write_rank_json(std::cout, res);
}

void write_manifest_files(Run& r) {
  r.write_text("resolved_config.toml", r.config.resolved_toml());
  nlohmann::ordered_json j;
  j["command"] = r.command;
  j["seed"] = r.seed;
  j["config_file"] = r.config.source();
  j["config"] = r.config.resolved();
  j["outputs"] = r.outputs;
  std::ofstream os(r.out / "manifest.json", std::ios::trunc);
  if (!os || !(os << j.dump(2) << '\n')) fail(ErrorKind::io, "cannot write manifest.json");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive CNN training and evaluation"};
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    void (*fn)(Run&);
  };
  const Command commands[] = {
      {"synth", "generate a synthetic image corpus", cmd_synth},
      {"train", "train a base CNN", cmd_train},
      {"score", "score a dataset with a checkpoint", cmd_score},
      {"filter", "apply probabilistic sample removal to scores", cmd_filter},
      {"pcnn", "train, filter and fine-tune in one run", cmd_pcnn},
      {"finetune", "continue training a checkpoint", cmd_finetune},
      {"transfer", "k-fold fine-tuning on a target dataset", cmd_transfer},
      {"baseline", "colour-histogram and bag-of-words baselines", cmd_baseline},
      {"eval", "evaluate a checkpoint", cmd_eval},
      {"report", "merge report files into one table", cmd_report},
      {"filters", "export first-layer filters as an image", cmd_filters},
      {"rank", "list the most positive and most negative samples", cmd_rank},
  };

  std::string config_path, out_dir = ".";
  std::uint64_t seed = 1;
  std::vector<std::string> overrides;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("config", config_path, "config file")->required();
    sub->add_option("--seed", seed, "master seed")->capture_default_str();
    sub->add_option("--out", out_dir, "output directory")->capture_default_str();
    sub->add_option("--set", overrides, "override a config key (section.key=value)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << R"({"error":"usage","message":)" << nlohmann::json(e.what()).dump() << "}\n";
    return 2;
  }

  const auto it = std::find_if(std::begin(commands), std::end(commands),
                               [&](const Command& c) { return app.got_subcommand(c.name); });
  Run run;
  run.command = it->name;
  run.seed = seed;
  run.out = out_dir;
  try {
    run.config = Config::load(config_path);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) fail(ErrorKind::config, "--set expects section.key=value, got '" + o + "'");
      run.config.set(o.substr(0, eq), o.substr(eq + 1));
    }
    fs::create_directories(run.out);
    it->fn(run);
    write_manifest_files(run);
  } catch (const Error& e) {
    std::cerr << R"({"error":")" << to_string(e.kind()) << R"(","message":)" << nlohmann::json(e.what()).dump()
              << "}\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << R"({"error":"io","message":)" << nlohmann::json(e.what()).dump() << "}\n";
    return exit_code(ErrorKind::io);
  }
  return 0;
}
