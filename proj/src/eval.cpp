#include "pasa/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "pasa/detector.hpp"

namespace pasa {

namespace {

// Stream tags for derive_child_seed.
constexpr std::uint64_t kPromptStream = 1;
constexpr std::uint64_t kWatermarkedStream = 2;
constexpr std::uint64_t kUnwatermarkedStream = 3;
constexpr std::uint64_t kKeyStream = 4;
constexpr std::uint64_t kDistortionStream = 5;
constexpr std::uint64_t kAttackStreamBase = 100;

void check_scores(std::span<const double> h1, std::span<const double> h0) {
  if (h1.empty() || h0.empty()) throw Error(ErrorCode::kInvalidInput, "score samples must be non-empty");
}

std::pair<double, double> mean_sd(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {mean, sd};
}

/// Kolmogorov limiting survival function Q_KS(lambda).
double kolmogorov_survival(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 200; ++j) {
    const double term = sign * 2.0 * std::exp(-2.0 * j * j * lambda * lambda);
    sum += term;
    if (std::abs(term) <= 1e-12 * std::abs(sum) || std::abs(term) <= 1e-300) return std::clamp(sum, 0.0, 1.0);
    sign = -sign;
  }
  return 1.0;
}

void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& body) {
  workers = std::max(1U, workers);
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < std::min<std::size_t>(workers, count); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

nlohmann::json lm_to_json(const LmSpec& spec) {
  return {{"vocab_size", spec.vocab_size},
          {"order", spec.order},
          {"concentration", spec.concentration},
          {"seed", spec.seed},
          {"mode", to_string(spec.mode)}};
}

LmSpec lm_from_json(const nlohmann::json& doc, LmSpec spec) {
  spec.vocab_size = doc.value("vocab_size", spec.vocab_size);
  spec.order = doc.value("order", spec.order);
  spec.concentration = doc.value("concentration", spec.concentration);
  spec.seed = doc.value("seed", spec.seed);
  if (doc.contains("mode")) spec.mode = lm_mode_from_string(doc.at("mode").get<std::string>());
  return spec;
}

std::string attack_label(const AttackSpec& spec) {
  std::ostringstream out;
  out << to_string(spec.kind) << "@" << spec.rate;
  return out.str();
}

SettingMetrics summarize(std::string attack, std::vector<double> h1, std::vector<double> h0,
                         std::vector<std::size_t> h1_matches, std::span<const double> fprs) {
  SettingMetrics m;
  m.attack = std::move(attack);
  m.auroc = roc_auc(h1, h0);
  for (double fpr : fprs) m.tpr_at_fpr[fpr] = tpr_at_fpr(h1, h0, fpr);
  std::tie(m.h0_mean, m.h0_sd) = mean_sd(h0);
  std::tie(m.h1_mean, m.h1_sd) = mean_sd(h1);
  m.h0_scores = std::move(h0);
  m.h1_scores = std::move(h1);
  m.h1_matches = std::move(h1_matches);
  return m;
}

}  // namespace

double roc_auc(std::span<const double> h1_scores, std::span<const double> h0_scores) {
  check_scores(h1_scores, h0_scores);
  std::vector<double> h0(h0_scores.begin(), h0_scores.end());
  std::sort(h0.begin(), h0.end());
  double wins = 0.0;
  for (double s : h1_scores) {
    const auto below = std::lower_bound(h0.begin(), h0.end(), s) - h0.begin();
    const auto ties = std::upper_bound(h0.begin(), h0.end(), s) - h0.begin() - below;
    wins += static_cast<double>(below) + 0.5 * static_cast<double>(ties);
  }
  return wins / (static_cast<double>(h1_scores.size()) * static_cast<double>(h0.size()));
}

double tpr_at_fpr(std::span<const double> h1_scores, std::span<const double> h0_scores, double fpr) {
  check_scores(h1_scores, h0_scores);
  if (!(fpr > 0.0 && fpr < 1.0)) throw Error(ErrorCode::kInvalidInput, "FPR target must lie in (0, 1)");
  const double threshold = higher_quantile({h0_scores.begin(), h0_scores.end()}, 1.0 - fpr);
  const auto above = std::count_if(h1_scores.begin(), h1_scores.end(), [&](double s) { return s > threshold; });
  return static_cast<double>(above) / static_cast<double>(h1_scores.size());
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::kInvalidInput, "KS samples must be non-empty");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double nx = static_cast<double>(x.size());
  const double ny = static_cast<double>(y.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
  }
  const double en = std::sqrt(nx * ny / (nx + ny));
  return {d, kolmogorov_survival((en + 0.12 + 0.11 / en) * d)};
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (n_pairs == 0) throw Error(ErrorCode::kInvalidInput, "n_pairs must be at least 1");
  if (length <= watermark.precursor_len) {
    throw Error(ErrorCode::kInvalidConfig, "length must exceed the precursor length");
  }
  watermark.validate();
  for (double f : fpr_targets) {
    if (!(f > 0.0 && f < 1.0)) throw Error(ErrorCode::kInvalidConfig, "FPR targets must lie in (0, 1)");
  }
  for (const auto& a : attacks) a.validate();
  if (!(slm_mix >= 0.0 && slm_mix <= 1.0)) throw Error(ErrorCode::kInvalidConfig, "slm mix must lie in [0, 1]");
  if (k == 0 || k > lm.vocab_size) throw Error(ErrorCode::kInvalidConfig, "k must lie in [1, vocab_size]");
  if (slm_base && slm_base->vocab_size != lm.vocab_size) {
    throw Error(ErrorCode::kInvalidConfig, "surrogate vocabulary differs from the generator's");
  }
}

WatermarkKey ExperimentConfig::key() const {
  if (!key_hex.empty()) return WatermarkKey::from_hex(key_hex);
  return WatermarkKey::from_seed(derive_child_seed(master_seed, kKeyStream, 0));
}

std::string ExperimentConfig::to_json() const {
  nlohmann::json doc;
  doc["lm"] = lm_to_json(lm);
  nlohmann::json slm{{"mix_to_uniform", slm_mix}};
  if (slm_base) slm["base"] = lm_to_json(*slm_base);
  doc["slm"] = slm;
  doc["embedding"] = {{"dim", embedding.dim},
                      {"semantic_classes", embedding.semantic_classes},
                      {"spread", embedding.spread},
                      {"seed", embedding.seed}};
  doc["k"] = k;
  doc["kmeans"] = {{"seed", kmeans_seed}, {"max_iters", kmeans_max_iters}, {"tol", kmeans_tol}};
  doc["alpha"] = watermark.alpha;
  doc["window"] = watermark.window;
  doc["precursor"] = watermark.precursor_len;
  doc["key"] = key_hex;
  doc["prompt_len"] = prompt_len;
  doc["length"] = length;
  doc["n_pairs"] = n_pairs;
  nlohmann::json atk = nlohmann::json::array();
  for (const auto& a : attacks) {
    atk.push_back({{"kind", to_string(a.kind)}, {"rate", a.rate}, {"seed", a.rng_seed}, {"block_len", a.block_len}});
  }
  doc["attacks"] = atk;
  doc["attack_reference"] = attack_reference == AttackReference::kSemantic ? "semantic" : "watermark";
  doc["fpr_targets"] = fpr_targets;
  doc["master_seed"] = master_seed;
  return doc.dump(1);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  ExperimentConfig cfg;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.contains("lm")) cfg.lm = lm_from_json(doc.at("lm"), cfg.lm);
    if (doc.contains("slm")) {
      const auto& slm = doc.at("slm");
      cfg.slm_mix = slm.value("mix_to_uniform", cfg.slm_mix);
      if (slm.contains("base")) cfg.slm_base = lm_from_json(slm.at("base"), cfg.lm);
    }
    if (doc.contains("embedding")) {
      const auto& e = doc.at("embedding");
      cfg.embedding.dim = e.value("dim", cfg.embedding.dim);
      cfg.embedding.semantic_classes = e.value("semantic_classes", cfg.embedding.semantic_classes);
      cfg.embedding.spread = e.value("spread", cfg.embedding.spread);
      cfg.embedding.seed = e.value("seed", cfg.embedding.seed);
    }
    cfg.k = doc.value("k", cfg.k);
    if (doc.contains("kmeans")) {
      const auto& km = doc.at("kmeans");
      cfg.kmeans_seed = km.value("seed", cfg.kmeans_seed);
      cfg.kmeans_max_iters = km.value("max_iters", cfg.kmeans_max_iters);
      cfg.kmeans_tol = km.value("tol", cfg.kmeans_tol);
    }
    cfg.watermark.alpha = doc.value("alpha", cfg.watermark.alpha);
    cfg.watermark.window = doc.value("window", cfg.watermark.window);
    cfg.watermark.precursor_len = doc.value("precursor", cfg.watermark.precursor_len);
    cfg.key_hex = doc.value("key", cfg.key_hex);
    cfg.prompt_len = doc.value("prompt_len", cfg.prompt_len);
    cfg.length = doc.value("length", cfg.length);
    cfg.n_pairs = doc.value("n_pairs", cfg.n_pairs);
    if (doc.contains("attacks")) {
      cfg.attacks.clear();
      for (const auto& a : doc.at("attacks")) {
        AttackSpec spec;
        spec.kind = attack_kind_from_string(a.at("kind").get<std::string>());
        spec.rate = a.value("rate", spec.rate);
        spec.rng_seed = a.value("seed", spec.rng_seed);
        spec.block_len = a.value("block_len", spec.block_len);
        cfg.attacks.push_back(spec);
      }
    }
    if (doc.contains("attack_reference")) {
      const auto ref = doc.at("attack_reference").get<std::string>();
      if (ref == "semantic") {
        cfg.attack_reference = AttackReference::kSemantic;
      } else if (ref == "watermark") {
        cfg.attack_reference = AttackReference::kWatermark;
      } else {
        throw Error(ErrorCode::kInvalidConfig, "attack_reference must be 'semantic' or 'watermark'");
      }
    }
    if (doc.contains("fpr_targets")) cfg.fpr_targets = doc.at("fpr_targets").get<std::vector<double>>();
    cfg.master_seed = doc.value("master_seed", cfg.master_seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("experiment config: ") + e.what());
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open config " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

ExperimentWorld build_world(const ExperimentConfig& cfg) {
  cfg.validate();
  const EmbeddingMatrix emb = synth_embeddings(cfg.lm.vocab_size, cfg.embedding.dim, cfg.embedding.semantic_classes,
                                               cfg.embedding.spread, cfg.embedding.seed);
  ExperimentWorld world;
  world.watermark_map = std::make_shared<const ClusterMap>(
      build_cluster_map(emb, {cfg.k, cfg.kmeans_seed, cfg.kmeans_max_iters, cfg.kmeans_tol}));
  if (cfg.attack_reference == AttackReference::kWatermark || cfg.embedding.semantic_classes == cfg.k) {
    world.reference_map = world.watermark_map;
  } else {
    world.reference_map = std::make_shared<const ClusterMap>(build_cluster_map(
        emb, {static_cast<std::uint32_t>(cfg.embedding.semantic_classes), cfg.kmeans_seed, cfg.kmeans_max_iters,
              cfg.kmeans_tol}));
  }
  world.lm = std::make_shared<const ToyLm>(cfg.lm, world.watermark_map);
  std::shared_ptr<const LanguageModel> slm_base = world.lm;
  if (cfg.slm_base) slm_base = std::make_shared<const ToyLm>(*cfg.slm_base, world.watermark_map);
  world.slm = std::make_shared<const SurrogateLm>(slm_base, cfg.slm_mix);
  return world;
}

MetricsReport run_experiment(const ExperimentConfig& cfg, unsigned workers) {
  const ExperimentWorld world = build_world(cfg);
  const WatermarkKey key = cfg.key();
  const std::size_t n = cfg.n_pairs;
  const std::size_t n_attacks = cfg.attacks.size();

  struct PairResult {
    double h0_score = 0.0;
    double h0_pbound = 1.0;
    double h1_score = 0.0;
    std::size_t h1_matches = 0;
    std::vector<double> attacked_scores;
    std::vector<std::size_t> attacked_matches;
    std::vector<double> nll_h1;
    std::vector<double> nll_h0;
    std::vector<double> nll_fresh;
  };
  std::vector<PairResult> results(n);

  parallel_for(n, workers, [&](std::size_t i) {
    PairResult& r = results[i];
    TokenSequence prompt;
    if (cfg.prompt_len > 0) {
      prompt = sample_unwatermarked(*world.lm, {}, cfg.prompt_len, derive_child_seed(cfg.master_seed, kPromptStream, i));
    }
    const GenerationRecord h1 = generate_watermarked(*world.lm, *world.watermark_map, key, cfg.watermark, prompt,
                                                     cfg.length,
                                                     derive_child_seed(cfg.master_seed, kWatermarkedStream, i));
    const TokenSequence h0 = sample_unwatermarked(*world.lm, prompt, cfg.length,
                                                  derive_child_seed(cfg.master_seed, kUnwatermarkedStream, i));

    const DetectionReport d1 = detect(h1.tokens, *world.slm, *world.watermark_map, key, cfg.watermark, prompt);
    const DetectionReport d0 = detect(h0, *world.slm, *world.watermark_map, key, cfg.watermark, prompt);
    r.h1_score = d1.normalized_score;
    r.h1_matches = d1.matches;
    r.h0_score = d0.normalized_score;
    r.h0_pbound = d0.p_value_bound;

    for (std::size_t a = 0; a < n_attacks; ++a) {
      AttackSpec spec = cfg.attacks[a];
      spec.rng_seed = derive_child_seed(cfg.master_seed ^ cfg.attacks[a].rng_seed, kAttackStreamBase + a, i);
      const TokenSequence attacked = apply_attack(h1.tokens, spec, *world.reference_map);
      const DetectionReport da = detect(attacked, *world.slm, *world.watermark_map, key, cfg.watermark, prompt);
      r.attacked_scores.push_back(da.normalized_score);
      r.attacked_matches.push_back(da.matches);
    }
    r.nll_h1 = token_nll(*world.lm, prompt, h1.tokens);
    r.nll_h0 = token_nll(*world.lm, prompt, h0);
    const WatermarkKey fresh_key = WatermarkKey::from_seed(derive_child_seed(cfg.master_seed, kKeyStream, i + 1));
    const GenerationRecord fresh =
        generate_watermarked(*world.lm, *world.watermark_map, fresh_key, cfg.watermark, prompt, cfg.length,
                             derive_child_seed(cfg.master_seed, kDistortionStream, i));
    r.nll_fresh = token_nll(*world.lm, prompt, fresh.tokens);
  });

  MetricsReport report;
  {
    std::ostringstream label;
    label << "K=" << cfg.k << ";w=" << cfg.watermark.window << ";alpha=" << cfg.watermark.alpha
          << ";mix=" << cfg.slm_mix;
    report.setting = label.str();
  }
  std::vector<double> h0(n);
  std::vector<double> h1(n);
  std::vector<std::size_t> h1_matches(n);
  std::vector<double> nll1;
  std::vector<double> nll0;
  std::vector<double> nll_fresh;
  std::size_t small_p = 0;
  for (std::size_t i = 0; i < n; ++i) {
    h0[i] = results[i].h0_score;
    h1[i] = results[i].h1_score;
    h1_matches[i] = results[i].h1_matches;
    nll1.insert(nll1.end(), results[i].nll_h1.begin(), results[i].nll_h1.end());
    nll0.insert(nll0.end(), results[i].nll_h0.begin(), results[i].nll_h0.end());
    nll_fresh.insert(nll_fresh.end(), results[i].nll_fresh.begin(), results[i].nll_fresh.end());
    if (results[i].h0_pbound <= 0.01) ++small_p;
  }
  report.settings.push_back(summarize("none", h1, h0, h1_matches, cfg.fpr_targets));
  for (std::size_t a = 0; a < n_attacks; ++a) {
    std::vector<double> ha(n);
    std::vector<std::size_t> ma(n);
    for (std::size_t i = 0; i < n; ++i) {
      ha[i] = results[i].attacked_scores[a];
      ma[i] = results[i].attacked_matches[a];
    }
    report.settings.push_back(summarize(attack_label(cfg.attacks[a]), ha, h0, ma, cfg.fpr_targets));
  }
  report.nll_watermarked_mean = mean_sd(nll_fresh).first;
  report.nll_unwatermarked_mean = mean_sd(nll0).first;
  report.nll_ks = ks_two_sample(nll_fresh, nll0);
  report.nll_shared_key_mean = mean_sd(nll1).first;
  report.nll_ks_shared_key = ks_two_sample(nll1, nll0);
  report.nll_tokens_per_side = nll0.size();
  report.h0_pbound_rate_at_001 = static_cast<double>(small_p) / static_cast<double>(n);
  return report;
}

std::string MetricsReport::to_json() const {
  nlohmann::json doc;
  doc["setting"] = setting;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : settings) {
    nlohmann::json tpr = nlohmann::json::array();
    for (const auto& [fpr, value] : s.tpr_at_fpr) tpr.push_back({{"fpr", fpr}, {"tpr", value}});
    rows.push_back({{"attack", s.attack},
                    {"auroc", s.auroc},
                    {"tpr", tpr},
                    {"h0_mean", s.h0_mean},
                    {"h0_sd", s.h0_sd},
                    {"h1_mean", s.h1_mean},
                    {"h1_sd", s.h1_sd}});
  }
  doc["results"] = rows;
  doc["nll"] = {{"watermarked_mean", nll_watermarked_mean},
                {"unwatermarked_mean", nll_unwatermarked_mean},
                {"ks_statistic", nll_ks.statistic},
                {"ks_p_value", nll_ks.p_value},
                {"tokens_per_side", nll_tokens_per_side},
                {"shared_key_mean", nll_shared_key_mean},
                {"shared_key_ks_statistic", nll_ks_shared_key.statistic},
                {"shared_key_ks_p_value", nll_ks_shared_key.p_value}};
  doc["h0_pbound_rate_at_0.01"] = h0_pbound_rate_at_001;
  return doc.dump(1);
}

std::string csv_header() { return "setting,attack,metric,value\n"; }

std::string MetricsReport::to_csv_rows() const {
  std::ostringstream out;
  out.precision(17);
  for (const auto& s : settings) {
    const auto row = [&](const std::string& metric, double value) {
      out << '"' << setting << '"' << ',' << s.attack << ',' << metric << ',' << value << '\n';
    };
    row("auroc", s.auroc);
    for (const auto& [fpr, value] : s.tpr_at_fpr) {
      std::ostringstream name;
      name << "tpr@" << fpr;
      row(name.str(), value);
    }
    row("h0_mean", s.h0_mean);
    row("h0_sd", s.h0_sd);
    row("h1_mean", s.h1_mean);
    row("h1_sd", s.h1_sd);
  }
  out << '"' << setting << '"' << ",none,nll_watermarked_mean," << nll_watermarked_mean << '\n';
  out << '"' << setting << '"' << ",none,nll_unwatermarked_mean," << nll_unwatermarked_mean << '\n';
  out << '"' << setting << '"' << ",none,nll_ks_p_value," << nll_ks.p_value << '\n';
  out << '"' << setting << '"' << ",none,nll_shared_key_ks_p_value," << nll_ks_shared_key.p_value << '\n';
  return out.str();
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "k") return SweepAxis::kK;
  if (name == "window" || name == "w") return SweepAxis::kWindow;
  if (name == "alpha") return SweepAxis::kAlpha;
  if (name == "rate") return SweepAxis::kRate;
  if (name == "mix") return SweepAxis::kMix;
  throw Error(ErrorCode::kInvalidConfig, "unknown sweep axis '" + name + "'");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kK: return "k";
    case SweepAxis::kWindow: return "window";
    case SweepAxis::kAlpha: return "alpha";
    case SweepAxis::kRate: return "rate";
    case SweepAxis::kMix: return "mix";
  }
  return "unknown";
}

ExperimentConfig with_axis(const ExperimentConfig& base, SweepAxis axis, double value) {
  ExperimentConfig cfg = base;
  switch (axis) {
    case SweepAxis::kK: cfg.k = static_cast<std::uint32_t>(std::llround(value)); break;
    case SweepAxis::kWindow: cfg.watermark.window = static_cast<std::uint32_t>(std::llround(value)); break;
    case SweepAxis::kAlpha: cfg.watermark.alpha = value; break;
    case SweepAxis::kRate:
      for (auto& a : cfg.attacks) a.rate = value;
      break;
    case SweepAxis::kMix: cfg.slm_mix = value; break;
  }
  return cfg;
}

std::vector<MetricsReport> run_sweep(const ExperimentConfig& base, SweepAxis axis, std::span<const double> values,
                                     unsigned workers) {
  std::vector<MetricsReport> reports;
  for (double v : values) {
    MetricsReport r = run_experiment(with_axis(base, axis, v), workers);
    std::ostringstream label;
    label << to_string(axis) << "=" << v << ";" << r.setting;
    r.setting = label.str();
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace pasa
