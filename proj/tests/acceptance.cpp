// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails. Pass criterion numbers as
// arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>

#include "cli_runner.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace pcnn;
using namespace pcnn::testing;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double test_accuracy(const Checkpoint& m, const Dataset& d) { return accuracy(score_dataset(m, d), d.labels()); }

Dataset synthetic(std::size_t count, double signal, double noise, std::uint64_t seed,
                  Domain domain = Domain::source) {
  SyntheticConfig c;
  c.count = count;
  c.signal = signal;
  c.noise_rate = noise;
  c.seed = seed;
  c.domain = domain;
  return generate_synthetic(c);
}

// Signal level at which a desk CNN trained on clean labels reaches about 0.95.
constexpr double benchmark_signal = 0.1;

Verdict removal_probability_values() {
  const double at0 = removal_probability(0.5, 0.5);
  const double at_ln2 = removal_probability(0.0, std::numbers::ln2);
  const double above = removal_probability(0.0, 0.9);
  const double at02 = removal_probability(0.0, 0.2);
  const double expect02 = 2.0 - std::exp(0.2);
  const bool ok = std::abs(at0 - 1.0) <= 1e-12 && std::abs(at_ln2) <= 1e-12 && above == 0.0 &&
                  std::abs(at02 - expect02) <= 1e-12 && std::abs(at02 - 0.77860) < 1e-5;
  return {ok, fmt("p(0)=%.15f p(ln2)=%.3g p(0.9)=%.3g p(0.2)=%.12f", at0, at_ln2, above, at02)};
}

Verdict gradient_suite() {
  Timer t;
  double layer_worst = 0.0;
  std::size_t configs = 0;
  std::string names;
  for (const auto& r : check_all_layers(20, 1234)) {
    layer_worst = std::max(layer_worst, r.max_relative_error);
    configs = r.configurations;
    names += (names.empty() ? "" : ",") + r.name;
  }
  double e2e_worst = 0.0;
  std::size_t probes = 0;
  std::uint64_t seed = 77;
  for (const auto& f : known_families()) {
    const EndToEndResult r = check_end_to_end(f, seed++, 100);
    e2e_worst = std::max(e2e_worst, r.max_relative_error);
    probes += r.probes;
  }
  const double secs = t.seconds();
  const bool ok = layer_worst < 1e-4 && e2e_worst < 1e-3 && configs >= 20 && probes == 400 && secs < 60.0;
  return {ok, fmt("layers [%s] x %zu configs max rel err %.2e; end-to-end %zu probes over 4 families max rel err "
                  "%.2e; %.1fs",
                  names.c_str(), configs, layer_worst, probes, e2e_worst, secs)};
}

Verdict progressive_benefit() {
  Timer t;
  double cnn_sum = 0.0, pcnn_sum = 0.0, cont_sum = 0.0, lo = 1.0, hi = 0.0;
  std::string per_seed;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const Dataset train_set = synthetic(2000, benchmark_signal, 0.25, 100 + s);
    const Dataset test_set = synthetic(500, benchmark_signal, 0.0, 200 + s);
    Rng rng(s);
    const Checkpoint init = build_architecture("2CONV-4FC", Profile::desk, rng);
    TrainConfig base;
    base.seed = s;
    const TrainConfig ft = base.fine_tune_schedule(200);
    ProgressiveOptions po;
    po.filter_seed = s;
    const ProgressiveResult r = train_progressive(init, train_set, base, ft, po);
    const double cnn = test_accuracy(r.cnn, test_set), pcnn = test_accuracy(r.pcnn, test_set);
    // control: the same fine-tuning budget on the unfiltered set
    const double cont = test_accuracy(train(r.cnn, train_set, ft).checkpoint, test_set);
    const double removed = static_cast<double>(r.outcomes[0].removed.size()) / 2000.0;
    cnn_sum += cnn;
    pcnn_sum += pcnn;
    cont_sum += cont;
    lo = std::min(lo, removed);
    hi = std::max(hi, removed);
    per_seed += fmt(" [seed %d cnn %.3f pcnn %.3f continued %.3f removed %.3f]", static_cast<int>(s), cnn, pcnn,
                    cont, removed);
  }
  const double gain = (pcnn_sum - cnn_sum) / 5.0, secs = t.seconds();
  const bool ok = gain >= 0.02 && lo >= 0.05 && hi <= 0.60 && secs < 900.0;
  return {ok, fmt("mean cnn %.4f pcnn %.4f gain %+.4f (need >= 0.02); continued-training control %.4f; removed "
                  "%.3f..%.3f; %.0fs;",
                  cnn_sum / 5, pcnn_sum / 5, gain, cont_sum / 5, lo, hi, secs) +
                  per_seed};
}

Verdict filter_statistics() {
  const std::size_t n = 10000;
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) d.samples.push_back(Sample{"s" + std::to_string(i), "", 0, {}, {}, {}});
  ScoreMatrix s({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    s.at(i, 0) = 0.4;
    s.at(i, 1) = 0.6;
  }
  const FilterOutcome f = filter_training_set(d, s, 2024);
  const double keep = std::exp(0.2) - 1.0, sigma = std::sqrt(keep * (1 - keep) / n);
  const double frac = static_cast<double>(f.kept.size()) / n;
  // margins at or above ln 2 across several seeds
  Rng rng(5);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = std::numbers::ln2 + rng.uniform(0.0, 1.0 - std::numbers::ln2);
    s.at(i, 0) = (1.0 - m) / 2.0;
    s.at(i, 1) = s.at(i, 0) + m;
    if (s.at(i, 1) - s.at(i, 0) < std::numbers::ln2) s.at(i, 1) = std::nextafter(s.at(i, 1), 2.0);
  }
  std::size_t removed_confident = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) removed_confident += filter_training_set(d, s, seed).removed.size();
  const bool ok = std::abs(frac - 0.2214) <= 3 * sigma && removed_confident == 0;
  return {ok, fmt("kept %.4f vs 0.2214 (3 sigma %.4f); confident-margin removals %zu over 5 x %zu samples", frac,
                  3 * sigma, removed_confident, n)};
}

Verdict transfer_protocol() {
  Timer t;
  bool folds_ok = true;
  for (std::size_t n : {500u, 23u, 101u}) {
    for (std::size_t k : {2u, 5u, 7u}) {
      const FoldPlan p = partition_folds(n, k, n + k);
      std::set<std::size_t> seen;
      std::size_t lo = n, hi = 0;
      for (const auto& f : p.folds) {
        lo = std::min(lo, f.size());
        hi = std::max(hi, f.size());
        for (std::size_t i : f) folds_ok &= seen.insert(i).second;
      }
      folds_ok &= seen.size() == n && *seen.rbegin() == n - 1 && hi - lo <= 1;
    }
  }
  std::size_t wins = 0;
  std::string per_seed;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const Dataset source = synthetic(2000, 0.35, 0.0, 400 + s);
    const Dataset target = synthetic(500, 0.35, 0.0, 500 + s, Domain::target);
    Rng rng(s);
    TrainConfig base;
    base.seed = s;
    const Checkpoint m = train(build_architecture("2CONV-4FC", Profile::desk, rng), source, base).checkpoint;
    const double untuned = test_accuracy(m, target);
    TrainConfig ft = base.fine_tune_schedule(100);
    ft.seed = 1000 + s;
    const TransferResult r = cross_domain_evaluate(m, target, 5, ft, 600 + s);
    std::vector<std::size_t> evaluated(target.size(), 0);
    for (const auto& f : r.plan.folds) {
      for (std::size_t i : f) ++evaluated[i];
    }
    folds_ok &= std::all_of(evaluated.begin(), evaluated.end(), [](std::size_t c) { return c == 1; });
    folds_ok &= r.micro.counts.total() == target.size();
    const double tuned = *r.micro.accuracy;
    wins += tuned >= untuned;
    per_seed += fmt(" [seed %d untuned %.3f tuned %.3f]", static_cast<int>(s), untuned, tuned);
  }
  const double secs = t.seconds();
  const bool ok = folds_ok && wins >= 4 && secs < 600.0;
  return {ok, fmt("fold invariants %s; fine-tuned >= untuned in %zu/5 seeds; %.0fs;", folds_ok ? "hold" : "BROKEN",
                  wins, secs) +
                  per_seed};
}

Verdict architecture_family() {
  Timer t;
  TempDir dir("accept-arch");
  const Dataset data = synthetic(256, 0.35, 0.25, 9);
  std::string detail;
  bool ok = true;
  std::uint64_t seed = 1;
  for (const auto& f : known_families()) {
    Rng rng(seed++);
    TrainConfig cfg;
    cfg.iterations = 200;
    cfg.log_interval = 1;
    const TrainResult r = train(build_architecture(f, Profile::desk, rng), data, cfg);
    bool finite = r.checkpoint.iteration == 200 && r.history.size() == 200;
    for (const auto& h : r.history) finite &= std::isfinite(h.loss);
    for (const auto& [_, p] : r.checkpoint.params) finite &= p.all_finite();
    save_checkpoint(r.checkpoint, dir / "a.ckpt");
    const Checkpoint back = load_checkpoint(dir / "a.ckpt");
    save_checkpoint(back, dir / "b.ckpt");
    const bool exact = back == r.checkpoint && read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt");
    ok &= finite && exact;
    detail += fmt("%s: loss %.3f->%.3f %s, round trip %s; ", f.c_str(), r.history.front().loss, r.history.back().loss,
                  finite ? "finite" : "NON-FINITE", exact ? "bit-exact" : "MISMATCH");
  }
  return {ok, detail + fmt("%.0fs", t.seconds())};
}

Verdict metric_arithmetic() {
  const double a = *f1_score(0.714, 0.729), b = *f1_score(0.759, 0.826);
  const double ea = std::abs(a - 0.722), eb = std::abs(b - 0.791);
  const bool ok = ea <= 5e-4 && eb <= 5e-4;
  return {ok, fmt("f1(0.714,0.729)=%.6f (|diff| %.2e vs 0.722), f1(0.759,0.826)=%.6f (|diff| %.2e vs 0.791), "
                  "tolerance 5e-4",
                  a, ea, b, eb)};
}

Verdict agreement_aggregation() {
  auto voted = [](std::string id, std::array<int, 5> v) {
    Sample s;
    s.id = std::move(id);
    s.worker_labels = v;
    return s;
  };
  Dataset hand;
  hand.samples = {voted("a", {1, 1, 1, 1, 1}), voted("b", {0, 0, 0, 0, 0}), voted("c", {1, 0, 1, 1, 1}),
                  voted("d", {0, 0, 1, 0, 0}), voted("e", {1, 1, 0, 0, 1}), voted("f", {0, 1, 0, 1, 0})};
  const AgreementSubsets h = aggregate_worker_labels(hand);
  const bool hand_ok = h.five_agree.size() == 2 && h.at_least_four.size() == 4 && h.at_least_three.size() == 6 &&
                       h.at_least_three.labels() == std::vector<int>{1, 0, 1, 0, 1, 0};

  Dataset mock;
  Rng rng(12);
  for (std::size_t i = 0; i < 1269; ++i) {
    const int agree = i < 882 ? 5 : i < 1116 ? 4 : 3;
    const int majority = rng.bernoulli(0.5) ? 1 : 0;
    std::vector<int> v(5);
    for (int k = 0; k < 5; ++k) v[k] = k < agree ? majority : 1 - majority;
    rng.shuffle(v);
    mock.samples.push_back(voted("m" + std::to_string(i), {v[0], v[1], v[2], v[3], v[4]}));
  }
  const AgreementSubsets m = aggregate_worker_labels(mock);
  auto ids = [](const Dataset& d) {
    std::set<std::string> s;
    for (const auto& x : d.samples) s.insert(x.id);
    return s;
  };
  const auto five = ids(m.five_agree), four = ids(m.at_least_four), three = ids(m.at_least_three);
  const bool nested = std::includes(four.begin(), four.end(), five.begin(), five.end()) &&
                      std::includes(three.begin(), three.end(), four.begin(), four.end()) && three == ids(mock);
  const bool ok = hand_ok && nested && five.size() == 882 && four.size() == 1116 && three.size() == 1269;
  return {ok, fmt("hand table %s; mock table %zu <= %zu <= %zu, nested %s", hand_ok ? "matches" : "MISMATCH",
                  five.size(), four.size(), three.size(), nested ? "yes" : "NO")};
}

Verdict baseline_features() {
  Timer t;
  bool oracle_ok = true;
  std::vector<std::vector<Descriptor>> sets;
  for (std::uint64_t s = 1; s <= 12; ++s) {
    Rng rng(s);
    const std::size_t h = 4 + rng.uniform_index(29), w = 4 + rng.uniform_index(29);
    const Tensor img = Tensor::generate({3, h, w}, [&] { return rng.uniform(); });
    oracle_ok &= gch(img).values == gch_oracle(img) && lch(img).values == lch_oracle(img);
    const Tensor big = Tensor::generate({3, 24, 24}, [&] { return rng.uniform(); });
    sets.push_back(extract_descriptors(big, DescriptorParams{4, 16}));
  }
  Codebook cb = build_vocabulary(sets, 10, 3);
  cb.params = DescriptorParams{4, 16};
  for (const auto& s : sets) oracle_ok &= bow_from_descriptors(s, cb).values == bow_oracle(s, cb.centroids);

  const Dataset train_set = synthetic(2000, benchmark_signal, 0.0, 101);
  const Dataset test_set = synthetic(500, benchmark_signal, 0.0, 201);
  Rng rng(1);
  const Checkpoint cnn = train(build_architecture("2CONV-4FC", Profile::desk, rng), train_set, TrainConfig{}).checkpoint;
  const double cnn_acc = test_accuracy(cnn, test_set);

  const DescriptorParams dp;
  std::vector<std::vector<Descriptor>> train_desc, test_desc;
  for (const auto& s : train_set.samples) train_desc.push_back(extract_descriptors(*s.pixels, dp));
  for (const auto& s : test_set.samples) test_desc.push_back(extract_descriptors(*s.pixels, dp));
  Codebook vocab = build_vocabulary(train_desc, 64, 7, 30);
  vocab.params = dp;
  auto features = [&](const Dataset& d, const std::vector<std::vector<Descriptor>>& desc, const std::string& arm) {
    std::vector<FeatureVector> out;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const Tensor& img = *d.samples[i].pixels;
      if (arm == "GCH") out.push_back(gch(img));
      if (arm == "LCH") out.push_back(lch(img));
      if (arm == "BoW") out.push_back(bow_from_descriptors(desc[i], vocab));
      if (arm == "GCH+BoW") out.push_back(concat(gch(img), bow_from_descriptors(desc[i], vocab)));
      if (arm == "LCH+BoW") out.push_back(concat(lch(img), bow_from_descriptors(desc[i], vocab)));
    }
    return feature_matrix(out);
  };
  double best_arm = 0.0;
  std::string arms;
  for (const std::string arm : {"GCH", "LCH", "BoW", "GCH+BoW", "LCH+BoW"}) {
    const LinearModel lm = train_linear(features(train_set, train_desc, arm), train_set.labels());
    const double acc = accuracy(predict_linear(lm, features(test_set, test_desc, arm)), test_set.labels());
    best_arm = std::max(best_arm, acc);
    arms += fmt(" %s %.3f", arm.c_str(), acc);
  }
  const bool ok = oracle_ok && cnn_acc - best_arm >= 0.03;
  return {ok, fmt("oracles %s; cnn %.3f vs best low-level arm %.3f (margin %+.3f, need >= 0.03);",
                  oracle_ok ? "match" : "MISMATCH", cnn_acc, best_arm, cnn_acc - best_arm) +
                  arms + fmt("; %.0fs", t.seconds())};
}

Verdict cli_determinism() {
  TempDir dir("accept-cli");
  auto path = [&](const std::string& p) { return (dir / p).string(); };
  auto config = [&](const std::string& name, const std::string& text) {
    write_file(dir / name, text);
    return path(name);
  };
  auto must = [&](const std::string& args) {
    const CliOutcome o = run_cli(args, dir.path());
    if (o.status != 0) fail(ErrorKind::data, "setup command failed: " + args + ": " + o.err);
  };
  must("synth " + config("s1.toml", "[synth]\ncount = 60\nnoise_rate = 0.2\nworker_votes = true\n") +
       " --seed 3 --out " + path("train"));
  must("synth " + config("s2.toml", "[synth]\ncount = 30\nworker_votes = true\nid_prefix = \"t\"\n") +
       " --seed 4 --out " + path("test"));
  const std::string data = "[data]\nmanifest = \"" + path("train/dataset.jsonl") + "\"\n";
  const std::string target = "[data]\nmanifest = \"" + path("test/dataset.jsonl") + "\"\n";
  const std::string test = "test_manifest = \"" + path("test/dataset.jsonl") + "\"\n";
  must("train " + config("base.toml", "[train]\niterations = 60\nbatch_size = 8\n" + data) + " --seed 2 --out " +
       path("model"));
  const std::string model = "[model]\ncheckpoint = \"" + path("model/model.ckpt") + "\"\n";
  must("score " + config("sc.toml", model + data) + " --out " + path("scores"));
  write_file(dir / "in.csv", std::string(report_header) + "\nCNN,all,0.5,0.6,0.545,0.7\n");

  const std::pair<std::string, std::string> commands[] = {
      {"synth", "[synth]\ncount = 16\nnoise_rate = 0.25\n"},
      {"train", "[train]\niterations = 10\nbatch_size = 8\n" + data + test},
      {"score", model + data},
      {"filter", data + "[filter]\nscores = \"" + path("scores/scores.csv") + "\"\n"},
      {"pcnn", "[train]\niterations = 60\nbatch_size = 8\n[finetune]\niterations = 5\n" + data + test +
                   "[eval]\nagreement = true\n"},
      {"finetune", model + data + "[finetune]\niterations = 5\nbatch_size = 8\n"},
      {"transfer", model + target + "[finetune]\niterations = 3\nbatch_size = 4\n[transfer]\nk = 3\n"},
      {"baseline", data + test + "[baseline]\ncodebook_size = 8\nkmeans_iters = 5\nmax_iters = 100\n"},
      {"eval", model + target + "[eval]\nagreement = true\n"},
      {"report", "[report]\ninputs = \"" + path("in.csv") + "\"\n"},
      {"filters", model},
      {"rank", model + data + "[rank]\nn = 4\n"},
  };
  std::size_t identical = 0, files = 0;
  std::string problems;
  for (const auto& [cmd, text] : commands) {
    const std::string cfg = config(cmd + ".toml", text);
    std::map<std::string, std::string> snaps[2];
    bool ran = true;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = dir / (cmd + "-" + std::to_string(rep));
      const CliOutcome o = run_cli(cmd + " " + cfg + " --seed 17 --out " + out.string(), dir.path());
      if (o.status != 0) {
        problems += " " + cmd + " exited " + std::to_string(o.status);
        ran = false;
        break;
      }
      snaps[rep] = snapshot(out);
    }
    if (!ran) continue;
    files += snaps[0].size();
    if (snaps[0] == snaps[1]) {
      ++identical;
    } else {
      problems += " " + cmd + " differs";
    }
  }
  const std::size_t total = std::size(commands);
  return {identical == total, fmt("%zu/%zu commands byte-identical across reruns (%zu output files)", identical, total,
                                  files) +
                                  (problems.empty() ? "" : ";" + problems)};
}

struct Criterion {
  int number;
  const char* name;
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion all[] = {
      {1, "removal probability", removal_probability_values},
      {2, "gradient suite", gradient_suite},
      {3, "progressive-training benefit", progressive_benefit},
      {4, "filter statistics", filter_statistics},
      {5, "transfer protocol", transfer_protocol},
      {6, "architecture family", architecture_family},
      {7, "metric arithmetic", metric_arithmetic},
      {8, "agreement aggregation", agreement_aggregation},
      {9, "baseline features", baseline_features},
      {10, "CLI determinism", cli_determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.number)) continue;
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s criterion %d (%s): %s\n", v.pass ? "PASS" : "FAIL", c.number, c.name, v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
