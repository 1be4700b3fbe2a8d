#include "catseg/config.hpp"

#include <cmath>

#include "catseg/corpus_io.hpp"
#include "catseg/errors.hpp"

namespace catseg {

using nlohmann::json;

void AugmentRanges::validate() const {
  if (!(shift >= 0.0 && shift <= 0.25)) throw ConfigError("augment.shift must lie in [0, 0.25]");
  if (!(zoom_min > 0.0 && zoom_min <= 1.0 && zoom_max >= 1.0 && zoom_max <= 2.0)) {
    throw ConfigError("augment zoom range must satisfy 0 < zoom_min <= 1 <= zoom_max <= 2");
  }
  if (!(scale_min > 0.0 && scale_min <= 1.0 && scale_max >= 1.0)) {
    throw ConfigError("augment scale range must satisfy 0 < scale_min <= 1 <= scale_max");
  }
}

AugmentRanges AugmentRanges::identity() {
  AugmentRanges r;
  r.enabled = false;
  r.shift = 0.0;
  r.zoom_min = r.zoom_max = 1.0;
  r.scale_min = r.scale_max = 1.0;
  return r;
}

namespace {

json model_section(const ModelOptions& m) {
  json j = m.to_json();
  for (const char* k : {"categories", "use_anatomical", "use_textual", "hard_assign", "hard_all", "group_mask",
                        "hard_mode", "init_seed"}) {
    j.erase(k);
  }
  return j;
}

std::string target_name(PromptTarget t) {
  switch (t) {
    case PromptTarget::kBoth: return "both";
    case PromptTarget::kAnatomical: return "anatomical";
    case PromptTarget::kTextual: return "textual";
  }
  return "both";
}

PromptTarget parse_target(const std::string& s) {
  if (s == "both") return PromptTarget::kBoth;
  if (s == "anatomical") return PromptTarget::kAnatomical;
  if (s == "textual") return PromptTarget::kTextual;
  throw ConfigError("loss.s2p_target must be both, anatomical or textual, got '" + s + "'");
}

// Copies `user` into `base`, refusing keys that `base` does not have.
void merge_checked(json& base, const json& user, const std::string& where) {
  if (!user.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (base[key].is_object()) {
      merge_checked(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

}  // namespace

json TrainConfig::to_json() const {
  return {{"taxonomy", taxonomy.string()},
          {"corpus", corpus.string()},
          {"bank", bank.string()},
          {"text_corpus", text_corpus.string()},
          {"out_dir", out_dir.string()},
          {"patch", {patch.h, patch.w, patch.d}},
          {"batch_size", batch_size},
          {"steps", steps},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"warmup_fraction", warmup_fraction},
          {"poly_power", poly_power},
          {"grad_clip", grad_clip},
          {"seed", seed},
          {"threads", threads},
          {"checkpoint_every", checkpoint_every},
          {"gumbel_noise", gumbel_noise},
          {"threshold", threshold},
          {"hd95_mode", hd_mode == HdMode::kPooled ? "pooled" : "directional_max"},
          {"evaluate_after_training", evaluate_after_training},
          {"use_anatomical", model.flags.anatomical},
          {"use_textual", model.flags.textual},
          {"hard_assign", model.flags.hard},
          {"hard_all", model.flags.hard_all},
          {"group_mask", model.flags.group_mask},
          {"augment",
           {{"enabled", augment.enabled},
            {"shift", augment.shift},
            {"zoom_min", augment.zoom_min},
            {"zoom_max", augment.zoom_max},
            {"scale_min", augment.scale_min},
            {"scale_max", augment.scale_max}}},
          {"loss",
           {{"dice", losses.dice},
            {"cls", losses.cls},
            {"s2p", losses.s2p},
            {"p2p", losses.p2p},
            {"dice_smooth", losses.dice_smooth},
            {"s2p_target", target_name(losses.s2p_target)},
            {"temperature", losses.infonce.temperature},
            {"paper_literal_infonce", losses.infonce.paper_literal}}},
          {"model", model_section(model)}};
}

json default_config_json() { return TrainConfig{}.to_json(); }

TrainConfig TrainConfig::from_json(const json& user) {
  json j = default_config_json();
  merge_checked(j, user, "");
  TrainConfig c;
  try {
    c.taxonomy = j.at("taxonomy").get<std::string>();
    c.corpus = j.at("corpus").get<std::string>();
    c.bank = j.at("bank").get<std::string>();
    c.text_corpus = j.at("text_corpus").get<std::string>();
    c.out_dir = j.at("out_dir").get<std::string>();
    const auto p = j.at("patch").get<std::vector<std::int64_t>>();
    if (p.size() != 3) throw ConfigError("patch needs three extents");
    c.patch = {p[0], p[1], p[2]};
    c.batch_size = j.at("batch_size").get<int>();
    c.steps = j.at("steps").get<int>();
    c.lr = j.at("lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.warmup_fraction = j.at("warmup_fraction").get<double>();
    c.poly_power = j.at("poly_power").get<double>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.threads = j.at("threads").get<int>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.gumbel_noise = j.at("gumbel_noise").get<bool>();
    c.threshold = j.at("threshold").get<double>();
    const auto mode = j.at("hd95_mode").get<std::string>();
    if (mode == "pooled") {
      c.hd_mode = HdMode::kPooled;
    } else if (mode == "directional_max") {
      c.hd_mode = HdMode::kDirectionalMax;
    } else {
      throw ConfigError("hd95_mode must be pooled or directional_max");
    }
    c.evaluate_after_training = j.at("evaluate_after_training").get<bool>();
    const auto& a = j.at("augment");
    c.augment.enabled = a.at("enabled").get<bool>();
    c.augment.shift = a.at("shift").get<double>();
    c.augment.zoom_min = a.at("zoom_min").get<double>();
    c.augment.zoom_max = a.at("zoom_max").get<double>();
    c.augment.scale_min = a.at("scale_min").get<double>();
    c.augment.scale_max = a.at("scale_max").get<double>();
    const auto& l = j.at("loss");
    c.losses.dice = l.at("dice").get<bool>();
    c.losses.cls = l.at("cls").get<bool>();
    c.losses.s2p = l.at("s2p").get<bool>();
    c.losses.p2p = l.at("p2p").get<bool>();
    c.losses.dice_smooth = l.at("dice_smooth").get<double>();
    c.losses.s2p_target = parse_target(l.at("s2p_target").get<std::string>());
    c.losses.infonce.temperature = l.at("temperature").get<double>();
    c.losses.infonce.paper_literal = l.at("paper_literal_infonce").get<bool>();
    json m = j.at("model");
    m["use_anatomical"] = j.at("use_anatomical");
    m["use_textual"] = j.at("use_textual");
    m["hard_assign"] = j.at("hard_assign");
    m["hard_all"] = j.at("hard_all");
    m["group_mask"] = j.at("group_mask");
    m["init_seed"] = c.seed;
    c.model = ModelOptions::from_json(m);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  const auto div = model.backbone.required_divisor();
  for (int a = 0; a < 3; ++a) {
    if (patch[a] <= 0 || patch[a] % div != 0) {
      throw ConfigError("patch extent " + std::to_string(patch[a]) + " is not a positive multiple of " +
                        std::to_string(div));
    }
  }
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (steps < 0) throw ConfigError("steps must be nonnegative");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must lie in [0, 1)");
  if (!(poly_power > 0.0)) throw ConfigError("poly_power must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be nonnegative");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be at least 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  if (!(losses.dice_smooth >= 0.0)) throw ConfigError("loss.dice_smooth must be nonnegative");
  if (!(losses.infonce.temperature > 0.0)) throw ConfigError("loss.temperature must be positive");
  if (!(losses.dice || losses.cls || losses.s2p || losses.p2p)) throw ConfigError("every loss term is disabled");
  augment.validate();
  model.flags.validate();
}

void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
  for (std::string item : overrides) {
    if (item.rfind("--", 0) == 0) item = item.substr(2);
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq);
    const std::string raw = item.substr(eq + 1);
    json* node = &doc;
    std::size_t start = 0;
    for (;;) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    if (node->is_string() && !value.is_string()) value = raw;
    *node = value;
  }
}

TrainConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json doc = default_config_json();
  if (!file.empty()) {
    if (!std::filesystem::is_regular_file(file)) throw ConfigError("config file not found: " + file.string());
    const json user = io::read_json(file);
    merge_checked(doc, user, "");
    // Relative paths in the file resolve against the file's directory.
    const auto base = std::filesystem::absolute(file).parent_path();
    for (const char* k : {"taxonomy", "corpus", "bank", "text_corpus", "out_dir"}) {
      if (!user.contains(k)) continue;
      const std::filesystem::path p = doc[k].get<std::string>();
      if (!p.empty() && p.is_relative()) doc[k] = (base / p).lexically_normal().string();
    }
  }
  apply_overrides(doc, overrides);
  return TrainConfig::from_json(doc);
}

}  // namespace catseg
