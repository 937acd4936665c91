// moesumm: train | finetune | generate | eval

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "moesumm/commands.hpp"
#include "moesumm/log.hpp"

namespace {

struct Flags {
  std::string config, checkpoint, input, mode, out;
  std::size_t beam = 0;
  std::uint64_t seed = 0;
  std::size_t dataset = 0;
};

bool given(const CLI::App& sub, const char* name) {
  const auto* opt = sub.get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

moesumm::CommandOptions to_options(const Flags& f, const CLI::App& sub) {
  moesumm::CommandOptions o;
  o.config = f.config;
  o.checkpoint = f.checkpoint;
  o.input = f.input;
  o.dataset_id = f.dataset;
  if (given(sub, "--mode")) o.mode = f.mode;
  if (given(sub, "--beam")) o.beam = f.beam;
  if (given(sub, "--seed")) o.seed = f.seed;
  if (given(sub, "--out")) o.out = f.out;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Main/deputy mixture-of-experts summarizer"};
  app.require_subcommand(1);
  Flags f;

  auto* train = app.add_subcommand("train", "Mixed multi-dataset training");
  auto* finetune = app.add_subcommand("finetune", "Deputy-only fine-tuning of a checkpoint");
  auto* generate = app.add_subcommand("generate", "Summarize JSONL sources");
  auto* eval = app.add_subcommand("eval", "ROUGE and expertise analytics");

  for (auto* sub : {train, finetune, eval}) {
    sub->add_option("--config", f.config, "Run configuration (JSON)")->required();
    sub->add_option("--seed", f.seed, "Overrides the config seed");
    sub->add_option("--out", f.out, "Output directory (overrides out_dir)");
  }
  for (auto* sub : {finetune, generate, eval}) {
    sub->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  }
  eval->add_option("--beam", f.beam, "Beam size")->check(CLI::PositiveNumber);
  generate->add_option("--input", f.input, "JSONL with a \"source\" field per line")->required();
  generate->add_option("--mode", f.mode, "full | main_only | classic")
      ->check(CLI::IsMember({"full", "main_only", "classic"}));
  generate->add_option("--beam", f.beam, "Beam size (default 4)")->check(CLI::PositiveNumber);
  generate->add_option("--dataset", f.dataset, "Dataset id for lines without a \"dataset\" field");
  generate->add_option("--out", f.out, "Output directory");
  generate->add_option("--seed", f.seed, "Accepted for symmetry; decoding is deterministic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  moesumm::init_logging();
  try {
    if (*train) {
      const auto a = moesumm::cmd_train(to_options(f, *train));
      std::printf("checkpoint %s\nreport %s\n", a.checkpoint.c_str(), a.report.c_str());
    } else if (*finetune) {
      const auto a = moesumm::cmd_finetune(to_options(f, *finetune));
      std::printf("checkpoint %s\nreport %s\nfrozen_params_unchanged %s\n", a.checkpoint.c_str(),
                  a.report.c_str(),
                  a.train_report.frozen_params_unchanged.value_or(false) ? "true" : "false");
    } else if (*generate) {
      const auto a = moesumm::cmd_generate(to_options(f, *generate));
      std::printf("%zu summaries written to %s\n", a.lines, a.output.c_str());
    } else if (*eval) {
      const auto a = moesumm::cmd_eval(to_options(f, *eval));
      std::printf("metrics %s\n", a.metrics.c_str());
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::fprintf(stderr, "moesumm: error: %s\n", msg.c_str());
    return 1;
  }
  return 0;
}
