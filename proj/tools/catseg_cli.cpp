// Command-line driver: data synthesis, prompt bank, training, evaluation,
// inference, ablation and embedding export.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "catseg/config.hpp"
#include "catseg/corpus_io.hpp"
#include "catseg/errors.hpp"
#include "catseg/inference.hpp"
#include "catseg/synth.hpp"
#include "catseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace catseg;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

Shape3 parse_shape(const std::string& text) {
  std::vector<std::int64_t> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      v.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw ConfigError("bad extent '" + item + "' in shape '" + text + "'");
    }
  }
  if (v.size() == 1) v = {v[0], v[0], v[0]};
  if (v.size() != 3) throw ConfigError("shape must be N or H,W,D, got '" + text + "'");
  return {v[0], v[1], v[2]};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

/// Loads the model and the data needed to build test-time prompts.
struct Loaded {
  CatModel model{nullptr};
  nlohmann::json meta;
  TrainData data;
  Shape3 patch;
};

Loaded load_for_inference(const fs::path& checkpoint, const fs::path& bank, const fs::path& text) {
  Loaded l;
  l.model = load_model(checkpoint, &l.meta);
  l.data.taxonomy = Taxonomy::from_json(l.meta.at("taxonomy"));
  l.data.bank = io::read_bank(bank, l.data.taxonomy);
  l.data.text = io::read_text_corpus(text, l.data.taxonomy);
  const auto p = l.meta.at("patch").get<std::vector<std::int64_t>>();
  l.patch = {p.at(0), p.at(1), p.at(2)};
  return l;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-guided multi-category segmentation toolkit"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic labelled corpus and its text corpus");
  std::string synth_tax, synth_out, synth_shape = "32", synth_prefix = "case";
  int synth_count = 8;
  std::uint64_t synth_seed = 0;
  synth->add_option("--taxonomy", synth_tax, "Taxonomy JSON")->required();
  synth->add_option("--out", synth_out, "Output directory (corpus/ and text.json)")->required();
  synth->add_option("--count", synth_count, "Number of cases");
  synth->add_option("--shape", synth_shape, "Volume shape, N or H,W,D");
  synth->add_option("--seed", synth_seed, "Base seed");
  synth->add_option("--prefix", synth_prefix, "Case id prefix");

  // build-bank
  auto* bank = app.add_subcommand("build-bank", "Crop and resample anatomical prompt volumes");
  std::string bank_tax, bank_corpus, bank_out, bank_shape = "16";
  bank->add_option("--taxonomy", bank_tax)->required();
  bank->add_option("--corpus", bank_corpus)->required();
  bank->add_option("--out", bank_out)->required();
  bank->add_option("--prompt-shape", bank_shape, "Prompt volume shape, N or H,W,D");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train from a JSON config; --key=value overrides any field");
  std::string train_config;
  bool print_defaults = false;
  train_cmd->add_option("--config", train_config, "Config JSON");
  train_cmd->add_flag("--print-defaults", print_defaults, "Print the default config and exit");
  train_cmd->allow_extras();

  // eval
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a labelled corpus");
  std::string eval_ckpt, eval_corpus, eval_bank, eval_text, eval_out, eval_mode = "pooled";
  double eval_threshold = 0.5;
  std::uint64_t eval_seed = 0;
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--corpus", eval_corpus)->required();
  eval->add_option("--bank", eval_bank)->required();
  eval->add_option("--text", eval_text)->required();
  eval->add_option("--out", eval_out, "Report path stem; writes .json and .csv")->required();
  eval->add_option("--threshold", eval_threshold);
  eval->add_option("--hd95-mode", eval_mode, "pooled or directional_max");
  eval->add_option("--seed", eval_seed);

  // infer
  auto* infer = app.add_subcommand("infer", "Predict masks for one case");
  std::string infer_ckpt, infer_case, infer_bank, infer_text, infer_out;
  double infer_threshold = 0.5;
  std::uint64_t infer_seed = 0;
  infer->add_option("--checkpoint", infer_ckpt)->required();
  infer->add_option("--case", infer_case, "Case directory")->required();
  infer->add_option("--bank", infer_bank)->required();
  infer->add_option("--text", infer_text)->required();
  infer->add_option("--out", infer_out, "Output corpus directory")->required();
  infer->add_option("--threshold", infer_threshold);
  infer->add_option("--seed", infer_seed);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train and score the prompt/assignment/mask grid");
  std::string ablate_config, ablate_heldout, ablate_out;
  std::vector<std::uint64_t> ablate_seeds{0, 1, 2};
  std::vector<std::string> ablate_rows;
  ablate->add_option("--config", ablate_config)->required();
  ablate->add_option("--heldout", ablate_heldout, "Held-out corpus directory")->required();
  ablate->add_option("--out", ablate_out)->required();
  ablate->add_option("--seeds", ablate_seeds)->delimiter(',');
  ablate->add_option("--rows", ablate_rows, "Subset of row labels")->delimiter(',');
  ablate->allow_extras();

  // export-embeddings
  auto* exp = app.add_subcommand("export-embeddings", "Dump prompt and query embeddings as CSV");
  std::string exp_ckpt, exp_corpus, exp_bank, exp_text, exp_out;
  std::uint64_t exp_seed = 0;
  exp->add_option("--checkpoint", exp_ckpt)->required();
  exp->add_option("--corpus", exp_corpus)->required();
  exp->add_option("--bank", exp_bank)->required();
  exp->add_option("--text", exp_text)->required();
  exp->add_option("--out", exp_out)->required();
  exp->add_option("--seed", exp_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) {
      const auto tax = io::read_taxonomy(synth_tax);
      const auto cases = generate_corpus(tax, parse_shape(synth_shape), synth_count, synth_seed, {}, synth_prefix);
      const fs::path out = synth_out;
      for (const auto& c : cases) io::write_case(out / "corpus", c, tax);
      io::write_text_corpus(out / "text.json", make_text_corpus(tax, synth_seed), tax);
      std::cout << "wrote " << cases.size() << " cases to " << (out / "corpus").string() << "\n";
    } else if (*bank) {
      const auto tax = io::read_taxonomy(bank_tax);
      const auto cases = io::read_corpus(bank_corpus, tax);
      const auto b = build_prompt_bank(cases, tax, parse_shape(bank_shape));
      io::write_bank(bank_out, b, tax);
      for (const auto& w : b.warnings) std::cerr << "warning: " << w << "\n";
    } else if (*train_cmd) {
      if (print_defaults) {
        std::cout << default_config_json().dump(2) << "\n";
        return 0;
      }
      const auto config = load_config(train_config, train_cmd->remaining());
      const auto data = load_train_data(config);
      const auto result = train(config, data, [&](const nlohmann::json& rec) {
        const int step = rec.at("step").get<int>();
        if (step == 1 || step % 100 == 0 || step == config.steps) std::cerr << rec.dump() << "\n";
      });
      if (result.metrics) std::cout << result.metrics->to_json().at("per_category").dump(2) << "\n";
    } else if (*eval) {
      auto l = load_for_inference(eval_ckpt, eval_bank, eval_text);
      const auto cases = io::read_corpus(eval_corpus, l.data.taxonomy);
      if (eval_mode != "pooled" && eval_mode != "directional_max") {
        throw ConfigError("--hd95-mode must be pooled or directional_max");
      }
      const auto mode = eval_mode == "pooled" ? HdMode::kPooled : HdMode::kDirectionalMax;
      PromptSource prompts(l.data, l.model);
      const auto report = evaluate_model(l.model, prompts, l.data.taxonomy, cases, l.patch, eval_threshold, mode,
                                         eval_seed);
      io::write_json(fs::path(eval_out + ".json"), report.to_json());
      write_text(eval_out + ".csv", metrics_csv({{eval_ckpt, report}}));
    } else if (*infer) {
      auto l = load_for_inference(infer_ckpt, infer_bank, infer_text);
      const auto lc = io::read_case(infer_case, l.data.taxonomy);
      PromptSource prompts(l.data, l.model);
      const auto mask = make_group_mask(l.data.taxonomy, l.model->options().flags);
      const auto pred = infer_volume(l.model, lc.image, prompts.inference_batch(lc.case_id, infer_seed), mask, l.patch);
      LabeledCase out = lc;
      for (std::size_t c = 0; c < out.masks.size(); ++c) {
        out.masks[c] = binarize(pred.probabilities[c], static_cast<float>(infer_threshold));
        out.present[c] = out.masks[c].count_nonzero() > 0;
      }
      io::write_case(infer_out, out, l.data.taxonomy);
      const fs::path dir = fs::path(infer_out) / lc.case_id;
      for (std::size_t c = 0; c < pred.probabilities.size(); ++c) {
        io::write_raw(dir / ("prob_" + std::to_string(c) + ".raw"), pred.probabilities[c].data());
      }
      io::write_json(dir / "prediction.json", {{"checkpoint", infer_ckpt},
                                                {"threshold", infer_threshold},
                                                {"padded", pred.padded},
                                                {"windows", pred.windows}});
    } else if (*ablate) {
      const auto config = load_config(ablate_config, ablate->remaining());
      const auto data = load_train_data(config);
      const auto heldout = io::read_corpus(ablate_heldout, data.taxonomy);
      const auto results = run_ablation(config, data, heldout, ablate_seeds, ablation_rows(ablate_rows),
                                        [](const std::string& label, std::uint64_t seed) {
                                          std::cerr << "ablation " << label << " seed " << seed << "\n";
                                        });
      fs::create_directories(ablate_out);
      io::write_json(fs::path(ablate_out) / "ablation.json", ablation_json(results));
      write_text(fs::path(ablate_out) / "ablation.csv", ablation_csv(results));
      std::cout << ablation_csv(results);
    } else if (*exp) {
      auto l = load_for_inference(exp_ckpt, exp_bank, exp_text);
      const auto cases = io::read_corpus(exp_corpus, l.data.taxonomy);
      PromptSource prompts(l.data, l.model);
      write_text(exp_out, export_embeddings(l.model, prompts, l.data.taxonomy, cases, l.patch, exp_seed));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
