// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails. Oracles here are written independently of the library.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "recapd/gradient_suite.hpp"
#include "recapd/metrics.hpp"
#include "recapd/protocol.hpp"
#include "recapd/synthetic.hpp"
#include "recapd/wilcoxon.hpp"

namespace fs = std::filesystem;
using namespace recapd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

AspectFeatureSet random_features(const std::vector<AspectSpec>& specs, Rng& rng, double scale = 1.0) {
  AspectFeatureSet fs;
  for (const auto& a : specs) {
    Aspect x{a.name, std::vector<double>(a.features)};
    for (double& v : x.values) v = scale * rng.normal();
    fs.aspects.push_back(std::move(x));
  }
  return fs;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const GradSuiteReport r = run_gradient_suite(100);
  const double secs = seconds_since(t0);
  const bool ok = r.passed() && r.max_rel_error < 1e-4 && secs < 60.0;
  return {ok, std::to_string(r.cases.size()) + " checks over 100 seeds, " + std::to_string(r.failures) +
                  " failures, max rel error " + fmt("%.2e", r.max_rel_error) + ", " + fmt("%.1f", secs) + " s"};
}

Outcome convexity() {
  Rng rng(2024);
  double worst_row = 0.0, worst_hull = 0.0;
  bool negative = false;
  for (int i = 0; i < 1000; ++i) {
    ModelConfig cfg;
    cfg.variant = Variant::kM4;
    cfg.embedding_dim = 2 + rng.below(15);
    for (const auto& name : default_aspect_names()) cfg.aspects.push_back({name, 1 + rng.below(9)});
    cfg.hidden1 = 1 + rng.below(8);
    cfg.hidden2 = 1 + rng.below(8);
    cfg.seed = rng.next();
    const ModelParams params = init_params(cfg);
    const double scale = std::pow(10.0, rng.uniform(-1.0, 1.5));
    const Tensor ssl = random_tensor({1 + rng.below(50), cfg.embedding_dim}, rng, scale);
    const AspectFeatureSet fs = random_features(cfg.aspects, rng, scale);
    Tape tape;
    Rng unused(0);
    ForwardVars f = forward(tape, ssl, fs, cfg, params, unused, false);
    const Tensor& w = f.attention.at(0).weights.value();
    const Tensor& z = f.attention.at(0).output.value();
    const Tensor& tok = f.tokens.value();
    for (std::size_t t = 0; t < w.rows(); ++t) {
      double s = 0;
      for (std::size_t k = 0; k < w.cols(); ++k) {
        s += w(t, k);
        negative = negative || w(t, k) < 0.0;
      }
      worst_row = std::max(worst_row, std::abs(s - 1.0));
      for (std::size_t j = 0; j < z.cols(); ++j) {
        double lo = tok(0, j), hi = tok(0, j), mag = 0;
        for (std::size_t k = 0; k < tok.rows(); ++k) {
          lo = std::min(lo, tok(k, j));
          hi = std::max(hi, tok(k, j));
          mag = std::max(mag, std::abs(tok(k, j)));
        }
        const double slack = 1e-12 * (1.0 + mag);
        worst_hull = std::max({worst_hull, lo - slack - z(t, j), z(t, j) - hi - slack});
      }
    }
  }
  const bool ok = worst_row <= 1e-9 && worst_hull <= 0.0 && !negative;
  return {ok, "1000 inputs, max |row sum - 1| " + fmt("%.2e", worst_row) + ", max hull violation " +
                  fmt("%.2e", std::max(0.0, worst_hull)) + (negative ? ", negative weight found" : "")};
}

/// Least-squares slope and R^2 of log(y) on log(x).
std::pair<double, double> loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx, dy = std::log(y[i]) - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return {sxy / sxx, sxy * sxy / (sxx * syy)};
}

double frobenius(const Tensor& t) {
  double s = 0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

Outcome flaw_witnesses() {
  // SSL frames share a mean direction (as real self-supervised embeddings
  // do) plus per-frame noise; the same frames are used for M1 and M2.
  const std::size_t d = 16, f = 35, draws = 20;
  const std::vector<std::size_t> lengths{50, 100, 200, 400};
  std::vector<double> m1_norm(lengths.size(), 0.0), m2_norm(lengths.size(), 0.0);
  Rng rng(7);
  for (std::size_t r = 0; r < draws; ++r) {
    const Tensor offset = random_tensor({d}, rng);
    const Tensor informed = random_tensor({f}, rng);
    Rng prng = rng.split(r);
    AttentionParams p1 = make_attention_params(Variant::kM1, Head::kTemporal, d, prng);
    AttentionParams p2 = make_attention_params(Variant::kM2, Head::kTemporal, d, prng);
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      Tensor ssl = random_tensor({lengths[i], d}, rng);
      for (std::size_t t = 0; t < lengths[i]; ++t)
        for (std::size_t j = 0; j < d; ++j) ssl(t, j) += offset[j];
      Tape tape;
      Var x = tape.constant(ssl), inf = tape.constant(informed);
      m1_norm[i] += frobenius(m1_temporal_attention(x, inf, p1).output.value()) / draws;
      m2_norm[i] += frobenius(m2_fixed_attention(x, inf, p2, Head::kTemporal).output.value()) / draws;
    }
  }
  std::vector<double> xs(lengths.begin(), lengths.end());
  const auto [slope, r2] = loglog_fit(xs, m1_norm);
  double ratio_lo = 1e300, ratio_hi = 0;
  for (std::size_t i = 0; i + 1 < lengths.size(); ++i) {
    ratio_lo = std::min(ratio_lo, m2_norm[i + 1] / m2_norm[i]);
    ratio_hi = std::max(ratio_hi, m2_norm[i + 1] / m2_norm[i]);
  }

  // Transposed M1 score rows (columns of W) on random inputs, both heads.
  std::size_t cases = 0, deviating = 0;
  double min_dev = 1e300;
  for (int i = 0; i < 200; ++i) {
    const std::size_t dd = std::vector<std::size_t>{8, 16, 32}[rng.below(3)], t = 2 + rng.below(60);
    Rng prng = rng.split(1000 + i);
    const Tensor ssl = random_tensor({t, dd}, rng), informed = random_tensor({f}, rng);
    for (Head h : {Head::kEmbedding, Head::kTemporal}) {
      AttentionParams p = make_attention_params(Variant::kM1, h, dd, prng);
      Tape tape;
      Var x = tape.constant(ssl), inf = tape.constant(informed);
      const Tensor w = (h == Head::kEmbedding ? m1_embedding_attention(x, inf, p) : m1_temporal_attention(x, inf, p))
                           .weights.value();
      double dev = 0;
      for (std::size_t c = 0; c < w.cols(); ++c) {
        double s = 0;
        for (std::size_t r = 0; r < w.rows(); ++r) s += w(r, c);
        dev = std::max(dev, std::abs(s - 1.0));
      }
      ++cases;
      deviating += dev > 0.1;
      min_dev = std::min(min_dev, dev);
    }
  }

  const bool linear = std::abs(slope - 1.0) <= 0.1 && r2 > 0.95;
  const bool transposed = deviating == cases;
  const bool stable = ratio_lo >= 0.8 && ratio_hi <= 1.25;
  return {linear && transposed && stable,
          "M1 log-log slope " + fmt("%.3f", slope) + " (R^2 " + fmt("%.4f", r2) + "); M1 transposed rows off by >0.1 in " +
              std::to_string(deviating) + "/" + std::to_string(cases) + " cases (min " + fmt("%.3f", min_dev) +
              "); M2 doubling ratios [" + fmt("%.3f", ratio_lo) + ", " + fmt("%.3f", ratio_hi) + "]"};
}

Outcome planted_aspect() {
  const auto t0 = Clock::now();
  std::size_t passing = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig c;
    c.speakers_per_class = 40;
    c.signal_strength = 10.0;
    c.noise_std = 1.0;
    c.couple_ssl = true;
    c.informative_aspect = seed % c.aspects.size();
    c.seed = seed;
    const Dataset ds = generate(c);
    const FoldPlan plan = make_folds(ds, 5, 0, seed);
    const auto& fold = plan.outer[0];
    const Dataset train = ds.filter_speakers({fold.train.begin(), fold.train.end()});
    const Dataset test = ds.filter_speakers({fold.test.begin(), fold.test.end()});

    ModelConfig m;
    m.variant = Variant::kM4;
    m.embedding_dim = c.embedding_dim;
    for (const auto& a : c.aspects) m.aspects.push_back({a.name, a.features});
    m.hidden1 = 32;
    m.hidden2 = 32;
    m.seed = seed;
    const TrainOptions topts{.lr = 1e-3, .batch_size = 16, .epochs = 20, .selection = Selection::kLast};
    const TrainResult res = train_model(train, m, topts, Rng(seed).split(3));

    // Cohort mean over held-out utterances of each utterance's mean score row.
    const std::size_t k = m.aspects.size();
    std::vector<double> mean(k, 0.0);
    Rng unused(0);
    for (const auto& u : test.samples) {
      const PredictionOutput p = predict(u.embeddings(), normalize_features(u.features, res.stats), m, res.params, unused);
      const Tensor& w = p.scores.at(0).weights;
      for (std::size_t t = 0; t < w.rows(); ++t)
        for (std::size_t j = 0; j < k; ++j) mean[j] += w(t, j) / static_cast<double>(w.rows() * test.size());
    }
    const double target = mean[c.informative_aspect];
    bool ok = target > 1.0 / static_cast<double>(k) + 0.15;
    for (std::size_t j = 0; j < k; ++j)
      if (j != c.informative_aspect) ok = ok && target > mean[j];
    passing += ok;
    detail << (seed ? "; " : "") << "seed " << seed << " " << c.aspects[c.informative_aspect].name << " "
           << fmt("%.3f", target) << (ok ? "" : " (miss)");
  }
  const double secs = seconds_since(t0);
  return {passing >= 4 && secs < 600.0,
          std::to_string(passing) + "/5 seeds; " + detail.str() + "; " + fmt("%.0f", secs) + " s"};
}

Outcome ablation_order(std::size_t jobs) {
  SynthConfig c;
  c.speakers_per_class = 40;
  c.signal_strength = 2.0;  // features informative (Bayes accuracy 0.84)
  c.couple_ssl = true;
  c.ssl_signal = 0.5;  // SSL weakly informative
  const Dataset ds = generate(c);
  ModelConfig m;
  m.embedding_dim = c.embedding_dim;
  for (const auto& a : c.aspects) m.aspects.push_back({a.name, a.features});
  m.hidden1 = 32;
  m.hidden2 = 32;
  const TrainOptions topts{.lr = 1e-3, .batch_size = 16, .epochs = 15, .selection = Selection::kLast};
  EvalOptions e;
  e.jobs = jobs;
  const EvalReport r = run_protocol_B(ds, {Variant::kM1, Variant::kM2, Variant::kM3, Variant::kM4}, m, topts, e);
  auto f1 = [&](std::size_t row) { return *r.rows.at(row).metrics[2].mean; };
  const double m2 = f1(1), m3 = f1(2), m4 = f1(3);
  return {m3 <= m4 && m4 <= m2 + 0.03, "mean F1 over seeds 0-4: M1 " + fmt("%.3f", f1(0)) + ", M2 " + fmt("%.3f", m2) +
                                           ", M3 " + fmt("%.3f", m3) + ", M4 " + fmt("%.3f", m4)};
}

Outcome split_mono(std::size_t jobs) {
  Rng rng(3);
  const Tensor rec = random_tensor({103, 3}, rng);
  const std::vector<Tensor> segs = segment_recording(rec, 10);
  std::size_t row = 0, shortest = 1000, longest = 0;
  bool contiguous = segs.size() == 10;
  for (const auto& s : segs) {
    shortest = std::min(shortest, s.rows());
    longest = std::max(longest, s.rows());
    for (std::size_t t = 0; t < s.rows(); ++t, ++row)
      for (std::size_t j = 0; j < 3; ++j) contiguous = contiguous && row < 103 && s(t, j) == rec(row, j);
  }
  contiguous = contiguous && row == 103;

  SynthConfig c;
  c.speakers_per_class = 5;
  c.utterances_per_speaker = 4;
  c.embedding_dim = 4;
  c.tasks = {Task::kDdk, Task::kMonologue};
  const Dataset ds = generate(c);
  ModelConfig m;
  m.embedding_dim = 4;
  for (const auto& a : c.aspects) m.aspects.push_back({a.name, a.features});
  m.hidden1 = 4;
  m.hidden2 = 4;
  EvalOptions e;
  e.n_outer = 2;
  e.seeds = {0};
  e.jobs = jobs;
  const EvalReport r =
      run_protocol_A(ds, Variant::kM4, m, {.lr = 1e-3, .batch_size = 8, .epochs = 2, .selection = Selection::kLast}, e);
  bool has_row = false;
  for (const auto& row_ : r.rows) has_row = has_row || (row_.task_set == "split-mono" && row_.metrics[2].mean);
  std::size_t mono = 0, split = 0;
  for (const auto& f : r.records) {
    if (f.task_set == "monologue") mono += f.n_test;
    if (f.task_set == "split-mono") split += f.n_test;
  }
  const bool ok = contiguous && longest - shortest <= 1 && has_row && split == 10 * mono;
  return {ok, "T=103 -> " + std::to_string(segs.size()) + " segments of " + std::to_string(shortest) + ".." +
                  std::to_string(longest) + " frames" + (contiguous ? ", contiguous cover" : ", NOT a contiguous cover") +
                  "; protocol A rows: " + std::to_string(r.rows.size()) +
                  (has_row ? " incl. split-mono" : " without split-mono") + " (" + std::to_string(split) +
                  " clips from " + std::to_string(mono) + " monologues)"};
}

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

double enumerated_p(const std::vector<double>& d) {
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double below = 0, tied = 0;
    for (std::size_t j = 0; j < n; ++j) {
      below += std::abs(d[j]) < std::abs(d[i]);
      tied += std::abs(d[j]) == std::abs(d[i]);
    }
    rank[i] = below + (tied + 1) / 2;
  }
  double observed = 0;
  for (std::size_t i = 0; i < n; ++i) observed += d[i] > 0 ? rank[i] : 0.0;
  double le = 0, ge = 0;
  const std::size_t patterns = std::size_t{1} << n;
  for (std::size_t mask = 0; mask < patterns; ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i) w += (mask >> i & 1) ? rank[i] : 0.0;
    le += w <= observed + 1e-9;
    ge += w >= observed - 1e-9;
  }
  return std::min(1.0, 2.0 * std::min(le, ge) / static_cast<double>(patterns));
}

Outcome statistics_oracles() {
  Rng rng(11);
  std::size_t auc_cases = 0, auc_bad = 0;
  while (auc_cases < 1000) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> s(n);
    std::vector<int> y(n);
    int pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.below(2) ? rng.uniform() : static_cast<double>(rng.below(5)) / 4.0;
      y[i] = static_cast<int>(rng.below(2));
      pos += y[i];
    }
    if (pos == 0 || pos == static_cast<int>(n)) continue;
    ++auc_cases;
    const auto auc = compute_metrics(s, y).auc;
    auc_bad += !auc || *auc != pairwise_auc(s, y);
  }

  std::size_t exact_cases = 0, exact_bad = 0;
  for (std::size_t n = 1; n <= 12; ++n) {
    for (int rep = 0; rep < 40; ++rep) {
      std::vector<double> x(n), zero(n, 0.0);
      for (auto& v : x) {
        v = static_cast<double>(static_cast<int>(rng.below(9)) - 4) / 2.0;
        if (v == 0.0) v = rng.uniform(0.1, 3.0);
      }
      ++exact_cases;
      const WilcoxonResult r = wilcoxon_signed_rank(x, zero, {.exact_max_n = 25, .min_n = 1});
      exact_bad += !r.exact || r.p_value != enumerated_p(x);
    }
  }

  double worst = 0;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> x(20), y(20);
    for (std::size_t i = 0; i < 20; ++i) {
      x[i] = rng.normal(rng.uniform(0.0, 0.8), 1.0);
      y[i] = rng.normal();
    }
    const double exact = wilcoxon_signed_rank(x, y).p_value;
    const double approx = wilcoxon_signed_rank(x, y, {.exact_max_n = 0}).p_value;
    worst = std::max(worst, std::abs(exact - approx));
  }
  return {auc_bad == 0 && exact_bad == 0 && worst < 0.01,
          "AUC " + std::to_string(auc_cases - auc_bad) + "/" + std::to_string(auc_cases) + " exact; Wilcoxon exact " +
              std::to_string(exact_cases - exact_bad) + "/" + std::to_string(exact_cases) +
              " equal to enumeration (n=1..12); normal vs exact at n=20 max |dp| " + fmt("%.4f", worst)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome reproducibility() {
  const fs::path dir = fs::path(RECAPD_ACCEPTANCE_TMP) / "repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = RECAPD_CLI_PATH;
  auto sh = [&](const std::string& args) {
    const std::string cmd = "cd '" + dir.string() + "' && '" + cli + "' " + args + " >/dev/null 2>>stderr.txt";
    return std::system(cmd.c_str());
  };
  const std::string common =
      " --data data --seeds 0,1,2 --set model.hidden1=8 --set model.hidden2=8 --set train.epochs=3"
      " --set train.lr=0.001 --set eval.n_outer=3 --set eval.n_inner=2";
  int rc = sh("synth --out data --set synth.speakers_per_class=8 --set synth.utterances_per_speaker=4 --set synth.D=8");
  rc = rc ? rc : sh("ablate --out run1 --jobs 1" + common);
  rc = rc ? rc : sh("ablate --out run2 --jobs 4" + common);
  if (rc) return {false, "CLI failed: " + slurp(dir / "stderr.txt")};
  const std::string a = slurp(dir / "run1" / "eval_report.json"), b = slurp(dir / "run2" / "eval_report.json");
  return {!a.empty() && a == b, "two ablate runs (1 and 4 worker threads): " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + " bytes, " + (a == b ? "identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  std::size_t jobs = 0;
  if (argc > 1) jobs = static_cast<std::size_t>(std::strtoul(argv[1], nullptr, 10));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient-suite", gradient_suite},
      {"convexity-normalization", convexity},
      {"flaw-witnesses", flaw_witnesses},
      {"planted-aspect-recovery", planted_aspect},
      {"ablation-order", [jobs] { return ablation_order(jobs); }},
      {"split-mono", [jobs] { return split_mono(jobs); }},
      {"statistics-oracles", statistics_oracles},
      {"reproducibility", reproducibility},
  };
  std::size_t failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
