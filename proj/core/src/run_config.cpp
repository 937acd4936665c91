#include "moesumm/run_config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "moesumm/checkpoint.hpp"
#include "moesumm/random.hpp"

namespace moesumm {

namespace {

std::string join_path(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

void require_object(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
}

void reject_unknown(const nlohmann::json& j, const std::string& where,
                    std::initializer_list<const char*> allowed) {
  require_object(j, where);
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError("config: unknown key '" + join_path(where, key) + "'");
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, const std::string& where, T& into) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  const std::string path = join_path(where, key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError("config: '" + path + "' must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_unsigned()) throw ConfigError("config: '" + path + "' must be a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError("config: '" + path + "' must be a number");
  } else {
    if (!v.is_string()) throw ConfigError("config: '" + path + "' must be a string");
  }
  into = v.get<T>();
}

template <typename E, typename Parse>
void read_enum(const nlohmann::json& j, const char* key, const std::string& where, E& into, Parse parse) {
  std::string text;
  read(j, key, where, text);
  if (text.empty()) return;
  try {
    into = parse(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config: '" + join_path(where, key) + "': " + e.what());
  }
}

std::vector<CorpusSource> read_sources(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError("config: '" + where + "' must be an array");
  std::vector<CorpusSource> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string w = where + "[" + std::to_string(i) + "]";
    reject_unknown(j[i], w, {"path", "dataset_id"});
    CorpusSource s;
    read(j[i], "path", w, s.path);
    read(j[i], "dataset_id", w, s.dataset_id);
    if (s.path.empty()) throw ConfigError("config: '" + w + ".path' is required");
    out.push_back(std::move(s));
  }
  return out;
}

nlohmann::json sources_json(const std::vector<CorpusSource>& sources) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& s : sources) a.push_back({{"path", s.path}, {"dataset_id", s.dataset_id}});
  return a;
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},
          {"d_hidden_main", c.d_hidden_main},
          {"d_hidden_deputy", c.d_hidden_deputy},
          {"n_deputies", c.n_deputies},
          {"n_datasets", c.n_datasets},
          {"max_src_len", c.max_src_len},
          {"max_tgt_len", c.max_tgt_len},
          {"gating_mode", std::string(to_string(c.gating_mode))},
          {"gate_site", std::string(to_string(c.gate_site))},
          {"activation", std::string(to_string(c.activation))},
          {"positional", std::string(to_string(c.positional))},
          {"margin_weight", c.margin_weight},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c, const std::string& where) {
  reject_unknown(j, where,
                 {"vocab_size", "d_model", "n_heads", "n_layers", "d_hidden_main", "d_hidden_deputy",
                  "n_deputies", "n_datasets", "max_src_len", "max_tgt_len", "gating_mode", "gate_site",
                  "activation", "positional", "margin_weight", "seed"});
  read(j, "vocab_size", where, c.vocab_size);
  read(j, "d_model", where, c.d_model);
  read(j, "n_heads", where, c.n_heads);
  read(j, "n_layers", where, c.n_layers);
  read(j, "d_hidden_main", where, c.d_hidden_main);
  read(j, "d_hidden_deputy", where, c.d_hidden_deputy);
  read(j, "n_deputies", where, c.n_deputies);
  read(j, "n_datasets", where, c.n_datasets);
  read(j, "max_src_len", where, c.max_src_len);
  read(j, "max_tgt_len", where, c.max_tgt_len);
  read_enum(j, "gating_mode", where, c.gating_mode, parse_gating_mode);
  read_enum(j, "gate_site", where, c.gate_site, parse_gate_site);
  read_enum(j, "activation", where, c.activation, parse_activation);
  read_enum(j, "positional", where, c.positional, parse_positional);
  read(j, "margin_weight", where, c.margin_weight);
  read(j, "seed", where, c.seed);
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["profile"] = profile;
  j["model"] = model_config_to_json(model);
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"grad_accum_steps", train.grad_accum_steps},
                {"lr", train.adam.lr},
                {"beta1", train.adam.beta1},
                {"beta2", train.adam.beta2},
                {"adam_eps", train.adam.eps},
                {"warmup_steps", train.warmup_steps},
                {"linear_decay", train.linear_decay},
                {"clip_norm", train.clip_norm},
                {"detach_main", train.loss.detach_main},
                {"use_margin", train.loss.use_margin},
                {"margin_in_finetune", margin_in_finetune},
                {"add_fresh_deputy", add_fresh_deputy}};
  j["decode"] = {{"beam_size", decode.beam_size}, {"length_penalty", decode.length_penalty}};
  nlohmann::json data = nlohmann::json::object();
  if (this->data.synthetic) {
    const auto& s = *this->data.synthetic;
    nlohmann::json rules = nlohmann::json::array();
    for (auto r : s.spec.rules) rules.push_back(std::string(to_string(r)));
    data["synthetic"] = {{"rules", rules},
                         {"examples_per_domain", s.spec.examples_per_domain},
                         {"eval_examples_per_domain", s.eval_examples_per_domain},
                         {"src_min", s.spec.src_min},
                         {"src_max", s.spec.src_max},
                         {"first_dataset_id", s.first_dataset_id}};
    if (s.seed) data["synthetic"]["seed"] = *s.seed;
  }
  if (!this->data.corpora.empty()) data["corpora"] = sources_json(this->data.corpora);
  if (!this->data.eval.empty()) data["eval"] = sources_json(this->data.eval);
  j["data"] = data;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  return j;
}

RunConfig profile_config(const std::string& name) {
  RunConfig rc;
  rc.profile = name;
  if (name == "desk") {
    rc.model = desk_profile();
    rc.train.batch_size = 8;
    rc.train.clip_norm = 1.0;
    rc.train.linear_decay = true;
    return rc;
  }
  if (name == "paper-scale") {
    rc.model = paper_profile();
    rc.train.adam = AdamOptions{3e-5, 0.9, 0.999, 1e-8};
    rc.train.batch_size = 8;
    rc.train.grad_accum_steps = 4;
    rc.train.warmup_steps = 500;
    rc.decode.beam_size = 4;
    return rc;
  }
  throw ConfigError("config: unknown profile '" + name + "' (expected desk or paper-scale)");
}

RunConfig parse_run_config(const nlohmann::json& j) {
  reject_unknown(j, "", {"profile", "model", "train", "decode", "data", "seed", "out_dir"});
  std::string profile = "desk";
  read(j, "profile", "", profile);
  RunConfig rc = profile_config(profile);
  read(j, "seed", "", rc.seed);
  read(j, "out_dir", "", rc.out_dir);
  try {
    if (j.contains("model")) rc.model = model_config_from_json(j["model"], rc.model, "model");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    reject_unknown(t, "train",
                   {"epochs", "batch_size", "grad_accum_steps", "lr", "beta1", "beta2", "adam_eps",
                    "warmup_steps", "linear_decay", "clip_norm", "detach_main", "use_margin", "margin_in_finetune",
                    "add_fresh_deputy"});
    read(t, "epochs", "train", rc.train.epochs);
    read(t, "batch_size", "train", rc.train.batch_size);
    read(t, "grad_accum_steps", "train", rc.train.grad_accum_steps);
    read(t, "lr", "train", rc.train.adam.lr);
    read(t, "beta1", "train", rc.train.adam.beta1);
    read(t, "beta2", "train", rc.train.adam.beta2);
    read(t, "adam_eps", "train", rc.train.adam.eps);
    read(t, "warmup_steps", "train", rc.train.warmup_steps);
    read(t, "linear_decay", "train", rc.train.linear_decay);
    read(t, "clip_norm", "train", rc.train.clip_norm);
    read(t, "detach_main", "train", rc.train.loss.detach_main);
    read(t, "use_margin", "train", rc.train.loss.use_margin);
    read(t, "margin_in_finetune", "train", rc.margin_in_finetune);
    read(t, "add_fresh_deputy", "train", rc.add_fresh_deputy);
  }
  if (j.contains("decode")) {
    const auto& d = j["decode"];
    reject_unknown(d, "decode", {"beam_size", "length_penalty"});
    read(d, "beam_size", "decode", rc.decode.beam_size);
    read(d, "length_penalty", "decode", rc.decode.length_penalty);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    reject_unknown(d, "data", {"synthetic", "corpora", "eval"});
    if (d.contains("synthetic")) {
      const auto& s = d["synthetic"];
      reject_unknown(s, "data.synthetic",
                     {"rules", "examples_per_domain", "eval_examples_per_domain", "src_min", "src_max",
                      "first_dataset_id", "seed"});
      SyntheticData sd;
      if (s.contains("rules")) {
        if (!s["rules"].is_array()) throw ConfigError("config: 'data.synthetic.rules' must be an array");
        sd.spec.rules.clear();
        for (const auto& r : s["rules"]) {
          if (!r.is_string()) throw ConfigError("config: 'data.synthetic.rules' entries must be strings");
          try {
            sd.spec.rules.push_back(parse_domain_rule(r.get<std::string>()));
          } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config: 'data.synthetic.rules': ") + e.what());
          }
        }
      }
      read(s, "examples_per_domain", "data.synthetic", sd.spec.examples_per_domain);
      read(s, "eval_examples_per_domain", "data.synthetic", sd.eval_examples_per_domain);
      read(s, "src_min", "data.synthetic", sd.spec.src_min);
      read(s, "src_max", "data.synthetic", sd.spec.src_max);
      read(s, "first_dataset_id", "data.synthetic", sd.first_dataset_id);
      if (s.contains("seed")) {
        std::uint64_t seed = 0;
        read(s, "seed", "data.synthetic", seed);
        sd.seed = seed;
      }
      rc.data.synthetic = sd;
    }
    if (d.contains("corpora")) rc.data.corpora = read_sources(d["corpora"], "data.corpora");
    if (d.contains("eval")) rc.data.eval = read_sources(d["eval"], "data.eval");
  }
  rc.model.seed = rc.seed;
  rc.train.seed = rc.seed;
  rc.train.loss.margin_weight = rc.model.margin_weight;
  try {
    rc.model.validate();
    rc.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (rc.decode.beam_size == 0) throw ConfigError("config: 'decode.beam_size' must be >= 1");
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
  return parse_run_config(j);
}

std::string corpus_digest(const Corpus& corpus) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  mix(corpus.dataset_id);
  for (const auto& ex : corpus.examples) {
    mix(ex.dataset_id);
    mix(ex.source_ids.size());
    for (auto t : ex.source_ids) mix(static_cast<std::uint64_t>(t));
    mix(ex.target_ids.size());
    for (auto t : ex.target_ids) mix(static_cast<std::uint64_t>(t));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ResolvedData resolve_data(const RunConfig& config, const Vocabulary* vocab,
                          const std::filesystem::path& base_dir) {
  ResolvedData out;
  const LengthCaps caps{config.model.max_src_len, config.model.max_tgt_len};
  auto resolve = [&base_dir](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };

  if (config.data.synthetic) {
    const auto& s = *config.data.synthetic;
    SyntheticSpec spec = s.spec;
    spec.vocab_size = config.model.vocab_size;
    spec.seed = s.seed.value_or(derive_seed(config.seed, 3));
    spec.examples_per_domain += s.eval_examples_per_domain;
    auto all = generate_synthetic(spec, s.first_dataset_id);
    for (auto& c : all) {
      Corpus eval{c.dataset_id, {}};
      const auto n_train = s.spec.examples_per_domain;
      eval.examples.assign(c.examples.begin() + static_cast<std::ptrdiff_t>(n_train), c.examples.end());
      c.examples.resize(n_train);
      out.train.push_back(std::move(c));
      if (!eval.examples.empty()) out.eval.push_back(std::move(eval));
    }
    out.vocab = vocab ? *vocab : synthetic_vocabulary(config.model.vocab_size);
    if (vocab && !(*vocab == synthetic_vocabulary(config.model.vocab_size))) {
      // Re-encode through the given vocabulary so ids match the checkpoint.
      for (auto* list : {&out.train, &out.eval}) {
        for (auto& c : *list) {
          for (auto& ex : c.examples) {
            ex.source_ids = encode_source(*vocab, ex.raw_source, caps.max_src_len);
            ex.target_ids = encode_target(*vocab, ex.raw_summary);
          }
        }
      }
    }
  } else {
    if (vocab) {
      out.vocab = *vocab;
    } else {
      std::vector<std::string> texts;
      for (const auto& src : config.data.corpora) {
        auto t = read_jsonl_texts(resolve(src.path));
        texts.insert(texts.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
      }
      if (texts.empty() && !config.data.corpora.empty()) {
        throw CorpusError("corpora: no examples in the configured files");
      }
      out.vocab = texts.empty() ? Vocabulary() : build_vocab(texts, config.model.vocab_size);
    }
  }

  auto load_into = [&](const std::vector<CorpusSource>& sources, std::vector<Corpus>& into) {
    for (const auto& src : sources) {
      auto loaded = load_jsonl(resolve(src.path), src.dataset_id, out.vocab, caps);
      out.load_reports.push_back(loaded.report);
      for (auto& ex : loaded.examples) {
        auto it = std::find_if(into.begin(), into.end(),
                               [&](const Corpus& c) { return c.dataset_id == ex.dataset_id; });
        if (it == into.end()) {
          into.push_back(Corpus{ex.dataset_id, {}});
          it = into.end() - 1;
        }
        it->examples.push_back(std::move(ex));
      }
    }
  };
  load_into(config.data.corpora, out.train);
  load_into(config.data.eval, out.eval);
  std::sort(out.train.begin(), out.train.end(),
            [](const Corpus& a, const Corpus& b) { return a.dataset_id < b.dataset_id; });
  std::sort(out.eval.begin(), out.eval.end(),
            [](const Corpus& a, const Corpus& b) { return a.dataset_id < b.dataset_id; });
  for (const auto& c : out.train) out.hashes["train:" + std::to_string(c.dataset_id)] = corpus_digest(c);
  for (const auto& c : out.eval) out.hashes["eval:" + std::to_string(c.dataset_id)] = corpus_digest(c);
  return out;
}

}  // namespace moesumm
