#include "pasa/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "pasa/attacks.hpp"
#include "pasa/detector.hpp"
#include "pasa/embedder.hpp"
#include "pasa/eval.hpp"
#include "pasa/oracle.hpp"

namespace pasa {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitVerification = 2;
constexpr double kOracleTolerance = 1e-9;
constexpr std::uint64_t kCalibrationStream = 7;

struct Options {
  std::string config_path;
  std::string key_file;
  std::string cluster_map;
  std::optional<double> alpha;
  std::optional<std::uint32_t> window;
  std::optional<std::uint32_t> precursor;
  std::optional<std::uint32_t> k;
  std::optional<std::size_t> length;
  std::optional<double> rate;
  std::optional<std::string> attack;
  std::optional<std::uint64_t> seed;
  unsigned workers = 1;
  std::string out;

  // command specific
  std::string in;
  std::string embeddings;
  std::size_t count = 1;
  std::string records;
  std::string calibration;
  std::size_t calibration_samples = 200;
  std::string calibration_out;
  std::size_t instances = 500;
  std::string axis = "k";
  std::vector<double> values;
  std::string csv;
};

/// Defaults < config file < flags.
ExperimentConfig resolve_config(const Options& opt) {
  ExperimentConfig cfg = opt.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(opt.config_path);
  if (opt.alpha) cfg.watermark.alpha = *opt.alpha;
  if (opt.window) cfg.watermark.window = *opt.window;
  if (opt.precursor) cfg.watermark.precursor_len = *opt.precursor;
  if (opt.k) cfg.k = *opt.k;
  if (opt.length) cfg.length = *opt.length;
  if (opt.seed) cfg.master_seed = *opt.seed;
  if (opt.attack) {
    AttackSpec spec;
    spec.kind = attack_kind_from_string(*opt.attack);
    if (opt.rate) spec.rate = *opt.rate;
    cfg.attacks = {spec};
  } else if (opt.rate) {
    for (auto& a : cfg.attacks) a.rate = *opt.rate;
  }
  return cfg;
}

WatermarkKey resolve_key(const Options& opt, const ExperimentConfig& cfg) {
  if (!opt.key_file.empty()) return WatermarkKey::load(opt.key_file);
  if (!cfg.key_hex.empty()) return WatermarkKey::from_hex(cfg.key_hex);
  throw Error(ErrorCode::kInvalidConfig, "a key is required: pass --key-file or set \"key\" in the config");
}

/// Loads --cluster-map when given, otherwise builds the configured map.
ExperimentWorld resolve_world(const Options& opt, const ExperimentConfig& cfg) {
  ExperimentWorld world = build_world(cfg);
  if (!opt.cluster_map.empty()) {
    auto map = std::make_shared<const ClusterMap>(ClusterMap::load(opt.cluster_map));
    if (map->vocab_size() != cfg.lm.vocab_size) {
      throw Error(ErrorCode::kInvalidConfig, "cluster map vocabulary differs from the language model's");
    }
    world.watermark_map = map;
    world.lm = std::make_shared<const ToyLm>(cfg.lm, map);
    std::shared_ptr<const LanguageModel> base = world.lm;
    if (cfg.slm_base) base = std::make_shared<const ToyLm>(*cfg.slm_base, map);
    world.slm = std::make_shared<const SurrogateLm>(base, cfg.slm_mix);
  }
  return world;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kInvalidInput, "cannot write " + path);
  return f;
}

std::string join(const TokenSequence& tokens) {
  std::ostringstream out;
  for (std::size_t i = 0; i < tokens.size(); ++i) out << (i ? " " : "") << tokens[i];
  return out.str();
}

TokenSequence parse_token_line(const std::string& line, std::size_t line_no) {
  std::istringstream in(line);
  TokenSequence tokens;
  std::string field;
  while (in >> field) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(field, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != field.size() || field.front() == '-' || v > 0xffffffffULL) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": bad token '" + field + "'");
    }
    tokens.push_back(static_cast<TokenId>(v));
  }
  return tokens;
}

struct InputText {
  TokenSequence prompt;
  TokenSequence tokens;
};

/// Token-per-line files or generation-record JSONL (lines starting with '{').
std::vector<InputText> read_texts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open " + path);
  std::vector<InputText> texts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == '{') {
      GenerationRecord rec = GenerationRecord::from_json_line(line);
      texts.push_back({std::move(rec.prompt), std::move(rec.tokens)});
    } else {
      texts.push_back({{}, parse_token_line(line, line_no)});
    }
  }
  return texts;
}

std::vector<double> read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open " + path);
  std::vector<double> scores;
  std::string field;
  while (in >> field) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(field, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != field.size()) throw Error(ErrorCode::kParseError, "bad calibration score '" + field + "'");
    scores.push_back(v);
  }
  if (scores.empty()) throw Error(ErrorCode::kParseError, "calibration file " + path + " is empty");
  return scores;
}

int cmd_keygen(const Options& opt, std::ostream& out) {
  if (!opt.seed) throw Error(ErrorCode::kInvalidConfig, "keygen needs an explicit --seed");
  const WatermarkKey key = WatermarkKey::from_seed(*opt.seed);
  if (opt.out.empty()) {
    out << key.to_hex() << "\n";
  } else {
    key.save(opt.out);
    out << "wrote key to " << opt.out << "\n";
  }
  return kExitOk;
}

int cmd_embed_build(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(opt);
  const EmbeddingMatrix emb =
      opt.embeddings.empty()
          ? synth_embeddings(cfg.lm.vocab_size, cfg.embedding.dim, cfg.embedding.semantic_classes,
                             cfg.embedding.spread, cfg.embedding.seed)
          : load_external_embeddings(opt.embeddings);
  const ClusterMap map =
      build_cluster_map(emb, {cfg.k, opt.seed.value_or(cfg.kmeans_seed), cfg.kmeans_max_iters, cfg.kmeans_tol});
  if (opt.out.empty()) {
    out << map.to_json() << "\n";
  } else {
    map.save(opt.out);
    out << "built K=" << map.k() << " map over " << map.vocab_size() << " tokens -> " << opt.out << "\n";
  }
  return kExitOk;
}

int cmd_generate(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(opt);
  const WatermarkKey key = resolve_key(opt, cfg);
  const ExperimentWorld world = resolve_world(opt, cfg);
  const std::uint64_t seed = opt.seed.value_or(0);

  std::ostringstream tokens_out;
  std::ostringstream records_out;
  for (std::size_t i = 0; i < opt.count; ++i) {
    TokenSequence prompt;
    if (cfg.prompt_len > 0) {
      prompt = sample_unwatermarked(*world.lm, {}, cfg.prompt_len, derive_child_seed(seed, 1, i));
    }
    const GenerationRecord rec = generate_watermarked(*world.lm, *world.watermark_map, key, cfg.watermark, prompt,
                                                      cfg.length, derive_child_seed(seed, 2, i));
    tokens_out << join(rec.tokens) << "\n";
    records_out << rec.to_json_line() << "\n";
  }
  if (!opt.records.empty()) open_out(opt.records) << records_out.str();
  if (opt.out.empty()) {
    out << tokens_out.str();
  } else {
    open_out(opt.out) << tokens_out.str();
    out << "generated " << opt.count << " watermarked sequence(s) of length " << cfg.length << " -> " << opt.out
        << "\n";
  }
  return kExitOk;
}

int cmd_detect(const Options& opt, std::ostream& out) {
  if (opt.in.empty()) throw Error(ErrorCode::kInvalidInput, "detect needs --in");
  const ExperimentConfig cfg = resolve_config(opt);
  const WatermarkKey key = resolve_key(opt, cfg);
  const ExperimentWorld world = resolve_world(opt, cfg);
  const std::vector<InputText> texts = read_texts(opt.in);

  std::optional<std::vector<double>> bundled;
  if (!opt.calibration.empty()) bundled = read_scores(opt.calibration);
  // Self-calibration: H0 scores of unwatermarked samples with the same length.
  std::map<std::size_t, std::vector<double>> by_length;
  const auto calibration_for = [&](std::size_t length) -> const std::vector<double>& {
    if (bundled) return *bundled;
    auto [it, fresh] = by_length.try_emplace(length);
    if (fresh) {
      const std::uint64_t seed = opt.seed.value_or(0);
      for (std::size_t i = 0; i < opt.calibration_samples; ++i) {
        const TokenSequence h0 =
            sample_unwatermarked(*world.lm, {}, length, derive_child_seed(seed, kCalibrationStream, i));
        it->second.push_back(detect(h0, *world.slm, *world.watermark_map, key, cfg.watermark).normalized_score);
      }
    }
    return it->second;
  };

  std::ostringstream reports;
  std::size_t flagged = 0;
  const double primary_fpr = cfg.fpr_targets.front();
  for (std::size_t i = 0; i < texts.size(); ++i) {
    DetectionReport report =
        detect(texts[i].tokens, *world.slm, *world.watermark_map, key, cfg.watermark, texts[i].prompt);
    threshold_verdict(report, calibration_for(texts[i].tokens.size()), cfg.fpr_targets);
    if (report.verdict_at.at(primary_fpr)) ++flagged;
    out << "[" << i << "] " << report.summary_line() << "\n";
    std::string json = report.to_json();
    json.erase(std::remove(json.begin(), json.end(), '\n'), json.end());
    reports << json << "\n";
  }
  if (!opt.calibration_out.empty()) {
    auto f = open_out(opt.calibration_out);
    f.precision(17);
    for (const auto& [length, scores] : by_length) {
      for (double s : scores) f << s << "\n";
    }
  }
  if (!opt.out.empty()) open_out(opt.out) << reports.str();
  out << "flagged " << flagged << "/" << texts.size() << " at FPR " << primary_fpr << "\n";
  return kExitOk;
}

int cmd_attack(const Options& opt, std::ostream& out) {
  if (opt.in.empty()) throw Error(ErrorCode::kInvalidInput, "attack needs --in");
  const ExperimentConfig cfg = resolve_config(opt);
  if (cfg.attacks.empty()) throw Error(ErrorCode::kInvalidConfig, "attack needs --attack or an attack in the config");
  const ExperimentWorld world = resolve_world(opt, cfg);
  const ClusterMap& reference = opt.cluster_map.empty() ? *world.reference_map : *world.watermark_map;
  AttackSpec spec = cfg.attacks.front();
  const std::uint64_t seed = opt.seed.value_or(spec.rng_seed);

  std::ostringstream result;
  const std::vector<InputText> texts = read_texts(opt.in);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    spec.rng_seed = derive_child_seed(seed, 100, i);
    result << join(apply_attack(texts[i].tokens, spec, reference)) << "\n";
  }
  if (opt.out.empty()) {
    out << result.str();
  } else {
    open_out(opt.out) << result.str();
    out << "applied " << to_string(spec.kind) << " at rate " << spec.rate << " to " << texts.size()
        << " sequence(s) -> " << opt.out << "\n";
  }
  return kExitOk;
}

void print_report(const MetricsReport& report, std::ostream& out) {
  out << report.setting << "\n";
  for (const auto& s : report.settings) {
    out << "  " << s.attack << ": auroc=" << s.auroc;
    for (const auto& [fpr, tpr] : s.tpr_at_fpr) out << " tpr@" << fpr << "=" << tpr;
    out << " h1=" << s.h1_mean << "+-" << s.h1_sd << " h0=" << s.h0_mean << "+-" << s.h0_sd << "\n";
  }
  out << "  nll: watermarked=" << report.nll_watermarked_mean << " unwatermarked=" << report.nll_unwatermarked_mean
      << " ks_p=" << report.nll_ks.p_value << "\n";
}

int cmd_evaluate(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(opt);
  const MetricsReport report = run_experiment(cfg, opt.workers);
  print_report(report, out);
  if (!opt.out.empty()) open_out(opt.out) << report.to_json() << "\n";
  if (!opt.csv.empty()) open_out(opt.csv) << csv_header() << report.to_csv_rows();
  return kExitOk;
}

int cmd_sweep(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(opt);
  const SweepAxis axis = sweep_axis_from_string(opt.axis);
  std::vector<double> values = opt.values;
  if (values.empty()) {
    switch (axis) {
      case SweepAxis::kK: values = {2, 3, 4, 8, 16, 64, 256}; break;
      case SweepAxis::kWindow: values = {1, 2, 3, 5, 8}; break;
      case SweepAxis::kRate: values = {0.3, 0.5}; break;
      default: throw Error(ErrorCode::kInvalidConfig, "sweep over " + opt.axis + " needs --values");
    }
  }
  const auto reports = run_sweep(cfg, axis, values, opt.workers);
  std::ostringstream csv;
  csv << csv_header();
  for (const auto& r : reports) {
    print_report(r, out);
    csv << r.to_csv_rows();
  }
  if (!opt.out.empty()) open_out(opt.out) << csv.str();
  return kExitOk;
}

int cmd_oracle_verify(const Options& opt, std::ostream& out) {
  const auto summary = oracle::verify_random_instances(opt.instances, opt.seed.value_or(0));
  out << summary.to_json() << "\n";
  if (!opt.out.empty()) open_out(opt.out) << summary.to_json() << "\n";
  if (summary.max_deviation() >= kOracleTolerance) {
    out << "FAILED: max deviation " << summary.max_deviation() << " >= " << kOracleTolerance << "\n";
    return kExitVerification;
  }
  out << "ok: " << summary.instances << " instances, max deviation " << summary.max_deviation() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semantic-cluster watermarking toolkit", "pasa"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;

  app.add_option("--config", opt.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--key-file", opt.key_file, "file holding a 64-digit hex key");
  app.add_option("--cluster-map", opt.cluster_map, "cluster map JSON (otherwise built from the config)");
  app.add_option("--alpha", opt.alpha, "FA budget");
  app.add_option("--window", opt.window, "semantic window length w");
  app.add_option("--precursor", opt.precursor, "unwatermarked precursor tokens");
  app.add_option("--k", opt.k, "number of semantic clusters");
  app.add_option("--length", opt.length, "generated tokens per sequence");
  app.add_option("--rate", opt.rate, "attack rate");
  app.add_option("--attack", opt.attack, "within_cluster_replace | cross_cluster_replace | window_scramble");
  app.add_option("--seed", opt.seed, "seed for every random choice of the command");
  app.add_option("--workers", opt.workers, "worker threads (never changes results)")->check(CLI::PositiveNumber);
  app.add_option("--out", opt.out, "output file");

  app.add_subcommand("keygen", "derive a key from --seed");
  auto* embed = app.add_subcommand("embed-build", "cluster synthetic or external embeddings into a map");
  embed->add_option("--embeddings", opt.embeddings, "text file: 'rows dim' header then one row per token");
  auto* generate = app.add_subcommand("generate", "generate watermarked token sequences");
  generate->add_option("--count", opt.count, "number of sequences")->check(CLI::PositiveNumber);
  generate->add_option("--records", opt.records, "also write generation records (JSONL)");
  auto* detect_cmd = app.add_subcommand("detect", "score token sequences");
  detect_cmd->add_option("--in", opt.in, "token file or generation-record JSONL")->required();
  detect_cmd->add_option("--calibration", opt.calibration, "H0 normalized scores, whitespace separated");
  detect_cmd->add_option("--calibration-samples", opt.calibration_samples, "H0 samples when self-calibrating")
      ->check(CLI::PositiveNumber);
  detect_cmd->add_option("--calibration-out", opt.calibration_out, "write the self-calibration scores");
  auto* attack = app.add_subcommand("attack", "perturb token sequences");
  attack->add_option("--in", opt.in, "token file or generation-record JSONL")->required();
  auto* evaluate = app.add_subcommand("evaluate", "run one experiment");
  evaluate->add_option("--csv", opt.csv, "flat CSV metrics");
  auto* oracle_cmd = app.add_subcommand("oracle-verify", "check the closed forms on random tiny instances");
  oracle_cmd->add_option("--instances", opt.instances, "number of instances")->check(CLI::PositiveNumber);
  auto* sweep = app.add_subcommand("sweep", "run experiments along one axis, CSV to --out");
  sweep->add_option("--axis", opt.axis, "k | window | alpha | rate | mix");
  sweep->add_option("--values", opt.values, "axis values")->delimiter(',');

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitInvalid;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "keygen") return cmd_keygen(opt, out);
    if (name == "embed-build") return cmd_embed_build(opt, out);
    if (name == "generate") return cmd_generate(opt, out);
    if (name == "detect") return cmd_detect(opt, out);
    if (name == "attack") return cmd_attack(opt, out);
    if (name == "evaluate") return cmd_evaluate(opt, out);
    if (name == "oracle-verify") return cmd_oracle_verify(opt, out);
    if (name == "sweep") return cmd_sweep(opt, out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return kExitInvalid;
  }
  err << "unknown command " << name << "\n";
  return kExitInvalid;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace pasa
