#include "moesumm/commands.hpp"

#include <fstream>

#include "moesumm/checkpoint.hpp"
#include "moesumm/decoding.hpp"
#include "moesumm/log.hpp"

namespace moesumm {

namespace {

RunConfig load_config(const CommandOptions& options) {
  if (options.config.empty()) throw CommandError("--config is required");
  RunConfig rc = load_run_config(options.config);
  if (options.seed) {
    rc.seed = *options.seed;
    rc.model.seed = rc.seed;
    rc.train.seed = rc.seed;
  }
  if (options.out) rc.out_dir = options.out->string();
  return rc;
}

std::filesystem::path base_dir(const CommandOptions& options) {
  const auto parent = options.config.parent_path();
  return parent.empty() ? std::filesystem::path(".") : parent;
}

std::filesystem::path out_dir(const RunConfig& rc) {
  std::filesystem::path dir(rc.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CommandError(path.string() + ": cannot write");
  out << j.dump(2) << '\n';
}

template <typename F>
void write_text(const std::filesystem::path& path, F&& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CommandError(path.string() + ": cannot write");
  body(out);
}

CheckpointData require_checkpoint(const CommandOptions& options) {
  if (options.checkpoint.empty()) throw CommandError("--checkpoint is required");
  return load_checkpoint(options.checkpoint);
}

nlohmann::json load_reports_json(const ResolvedData& data) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : data.load_reports) a.push_back(r.to_json());
  return a;
}

}  // namespace

ExpertMode resolve_mode(const std::optional<std::string>& mode, const ModelConfig& config) {
  const ExpertMode full = full_mode_for(config.gating_mode);
  if (!mode || *mode == "full") return full;
  ExpertMode m;
  try {
    m = parse_expert_mode(*mode);
  } catch (const std::invalid_argument& e) {
    throw CommandError(std::string("--mode: ") + e.what());
  }
  if (m != ExpertMode::main_only && full == ExpertMode::main_only) {
    throw CommandError("--mode " + *mode + ": the checkpoint has no deputy experts");
  }
  return m;
}

TrainArtifacts cmd_train(const CommandOptions& options) {
  const RunConfig rc = load_config(options);
  const ResolvedData data = resolve_data(rc, nullptr, base_dir(options));
  if (data.train.empty()) throw CommandError("train: the config names no training corpora");
  check_contiguous(data.train);
  log_info("train: {} datasets, seed {}", data.train.size(), rc.seed);

  TrainResult result = train_mixed(rc.model, data.train, rc.train);
  const auto dir = out_dir(rc);
  TrainArtifacts art;
  art.checkpoint = dir / "model.moes";
  nlohmann::json provenance{{"seed", rc.seed},
                            {"regime", "mixed"},
                            {"epochs", rc.train.epochs},
                            {"corpus_hashes", data.hashes}};
  save_checkpoint(art.checkpoint, result.params, provenance, &data.vocab);
  result.report.checkpoint = art.checkpoint.string();

  art.report = dir / "train_report.json";
  nlohmann::json report = result.report.to_json();
  report["config"] = rc.to_json();
  report["load_reports"] = load_reports_json(data);
  write_json(art.report, report);
  art.loss_csv = dir / "loss.csv";
  write_text(art.loss_csv, [&](std::ostream& os) { result.report.write_loss_csv(os); });
  art.utilization_csv = dir / "utilization.csv";
  write_text(art.utilization_csv, [&](std::ostream& os) { result.report.write_utilization_csv(os); });
  art.train_report = std::move(result.report);
  return art;
}

TrainArtifacts cmd_finetune(const CommandOptions& options) {
  const CheckpointData ckpt = require_checkpoint(options);
  RunConfig rc = load_config(options);
  rc.model = ckpt.params.config;
  const Vocabulary vocab = ckpt.vocab.value_or(Vocabulary());
  const ResolvedData data = resolve_data(rc, ckpt.vocab ? &vocab : nullptr, base_dir(options));
  if (data.train.size() != 1) {
    throw CommandError("finetune: expected exactly one corpus, found " + std::to_string(data.train.size()));
  }
  if (data.train.front().examples.empty()) throw CommandError("finetune: the corpus has no examples");

  FinetuneOptions fo;
  fo.train = rc.train;
  fo.train.loss.use_margin = rc.train.loss.use_margin && rc.margin_in_finetune;
  fo.add_fresh_deputy = rc.add_fresh_deputy;
  log_info("finetune: dataset {} with {} examples", data.train.front().dataset_id,
           data.train.front().examples.size());
  TrainResult result = finetune_deputy(ckpt.params, data.train.front(), fo);

  const auto dir = out_dir(rc);
  TrainArtifacts art;
  art.checkpoint = dir / "finetuned.moes";
  nlohmann::json provenance{{"seed", rc.seed},
                            {"regime", "deputy_finetune"},
                            {"epochs", rc.train.epochs},
                            {"base_checkpoint", file_digest(options.checkpoint)},
                            {"base_provenance", ckpt.provenance},
                            {"corpus_hashes", data.hashes}};
  save_checkpoint(art.checkpoint, result.params, provenance, &vocab);
  result.report.checkpoint = art.checkpoint.string();

  art.report = dir / "finetune_report.json";
  nlohmann::json report = result.report.to_json();
  report["config"] = rc.to_json();
  report["selectors_added"] = result.params.config.n_datasets - ckpt.params.config.n_datasets;
  report["deputies_added"] = result.params.config.n_deputies - ckpt.params.config.n_deputies;
  write_json(art.report, report);
  art.loss_csv = dir / "loss.csv";
  write_text(art.loss_csv, [&](std::ostream& os) { result.report.write_loss_csv(os); });
  art.utilization_csv = dir / "utilization.csv";
  write_text(art.utilization_csv, [&](std::ostream& os) { result.report.write_utilization_csv(os); });
  art.train_report = std::move(result.report);
  return art;
}

GenerateArtifacts cmd_generate(const CommandOptions& options) {
  const CheckpointData ckpt = require_checkpoint(options);
  if (options.input.empty()) throw CommandError("--input is required");
  const auto& params = ckpt.params;
  const Vocabulary vocab = ckpt.vocab.value_or(Vocabulary());
  DecodeOptions dopt;
  dopt.mode = resolve_mode(options.mode, params.config);
  dopt.beam_size = options.beam.value_or(4);
  if (dopt.beam_size == 0) throw CommandError("--beam must be >= 1");
  dopt.vocab = &vocab;

  std::ifstream in(options.input);
  if (!in) throw CommandError(options.input.string() + ": cannot open");
  GenerateArtifacts art;
  const std::filesystem::path dir = options.out.value_or(".");
  std::filesystem::create_directories(dir);
  art.output = dir / "generated.jsonl";
  std::ofstream out(art.output, std::ios::trunc);
  if (!out) throw CommandError(art.output.string() + ": cannot write");

  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (split_whitespace(line).empty()) continue;
    const std::string where = options.input.string() + ":" + std::to_string(no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw CommandError(where + "malformed JSON");
    }
    if (!j.is_object() || !j.contains("source") || !j["source"].is_string()) {
      throw CommandError(where + "missing string field \"source\"");
    }
    std::size_t dataset = options.dataset_id;
    if (j.contains("dataset")) {
      if (!j["dataset"].is_number_unsigned()) throw CommandError(where + "\"dataset\" must be an integer");
      dataset = j["dataset"].get<std::size_t>();
    }
    if (dopt.mode == ExpertMode::full && dataset >= params.config.n_datasets) {
      throw CommandError(where + "dataset " + std::to_string(dataset) + " has no selector (" +
                         std::to_string(params.config.n_datasets) + " datasets)");
    }
    const auto src = encode_source(vocab, j["source"].get<std::string>(), params.config.max_src_len);
    std::size_t unk = 0;
    for (auto id : src) unk += id == kUnkId;
    const auto result = decode(params, src, dataset, dopt);
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& step : result.trace) {
      nlohmann::json s = nlohmann::json::array();
      for (const auto& r : step) s.push_back({{"layer", r.layer}, {"deputy", r.deputy}, {"gate", r.gate}});
      trace.push_back(std::move(s));
    }
    nlohmann::json o{{"summary", result.text},
                     {"tokens", result.tokens},
                     {"trace", trace},
                     {"unk_tokens", unk}};
    out << o.dump() << '\n';
    ++art.lines;
    art.unknown_tokens += unk;
  }
  if (art.unknown_tokens > 0) {
    log_warn("generate: {} source tokens were not in the checkpoint vocabulary and mapped to <unk>",
             art.unknown_tokens);
  }
  return art;
}

EvalArtifacts cmd_eval(const CommandOptions& options) {
  const CheckpointData ckpt = require_checkpoint(options);
  RunConfig rc = load_config(options);
  rc.model = ckpt.params.config;
  const Vocabulary vocab = ckpt.vocab.value_or(Vocabulary());
  const ResolvedData data = resolve_data(rc, ckpt.vocab ? &vocab : nullptr, base_dir(options));
  if (data.eval.empty()) throw CommandError("eval: the config names no evaluation sets");

  ReportOptions ro;
  ro.beam_size = options.beam.value_or(rc.decode.beam_size);
  ro.length_penalty = rc.decode.length_penalty;
  ro.vocab = &vocab;
  EvalArtifacts art;
  art.report = expertise_report(ckpt.params, data.eval, ro);

  const auto dir = out_dir(rc);
  const ParamReport formula = param_report(ckpt.params.config);
  const ParamReport walked = param_walk(ckpt.params);
  art.metrics_json = {{"datasets", art.report.to_json()},
                      {"beam_size", ro.beam_size},
                      {"param_report", {{"formula", formula.to_json()},
                                        {"walk", walked.to_json()},
                                        {"match", formula == walked}}}};
  art.metrics = dir / "metrics.json";
  write_json(art.metrics, art.metrics_json);
  write_text(dir / "rouge.csv", [&](std::ostream& os) { art.report.write_rouge_csv(os); });
  write_text(dir / "utilization.csv", [&](std::ostream& os) { art.report.write_utilization_csv(os); });
  write_text(dir / "stats.csv", [&](std::ostream& os) { art.report.write_stats_csv(os); });
  return art;
}

}  // namespace moesumm
