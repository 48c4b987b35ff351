#include "cinelstm/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>
#include <type_traits>

#include "cinelstm/errors.hpp"

namespace cinelstm {

using nlohmann::json;

namespace {

// Reads typed fields from a JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw std::invalid_argument(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) fail(key, "expected a boolean");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) fail(key, "expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) fail(key, "expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) fail(key, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) fail(key, "expected a string");
    }
    out = it->get<T>();
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw std::invalid_argument("unknown config key '" + where_ + "." + it.key() + "'");
    }
  }

 private:
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw std::invalid_argument("config key '" + where_ + "." + key + "': " + what);
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

SectorSpec parse_sector(const json& j, const std::string& where) {
  SectorSpec s;
  ObjectReader r(j, where);
  r.get("enabled", s.enabled);
  r.get("start_deg", s.start_deg);
  r.get("width_deg", s.width_deg);
  r.finish();
  return s;
}

json sector_json(const SectorSpec& s) {
  return {{"enabled", s.enabled}, {"start_deg", s.start_deg}, {"width_deg", s.width_deg}};
}

CycleConfig parse_cycle(const json& j) {
  CycleConfig c;
  ObjectReader r(j, "cycle");
  r.get("frames", c.frames);
  r.get("passes", c.passes);
  r.finish();
  return c;
}

void parse_localize(const json& j, RunConfig& cfg) {
  ObjectReader r(j, "localize");
  r.get("window", cfg.localize_window);
  r.get("r_min", cfg.localize.r_min);
  r.get("r_max", cfg.localize.r_max);
  r.get("margin", cfg.localize.margin);
  r.finish();
}

void parse_train(const json& j, TrainConfig& t) {
  ObjectReader r(j, "train");
  r.get("epochs", t.epochs);
  r.get("pretrain_epochs", t.pretrain_epochs);
  r.get("learning_rate", t.learning_rate);
  r.get("beta1", t.beta1);
  r.get("beta2", t.beta2);
  r.get("epsilon", t.epsilon);
  r.get("patience", t.patience);
  r.get("clip_norm", t.clip_norm);
  r.get("cycles_per_epoch", t.cycles_per_epoch);
  r.get("val_cycles_max", t.val_cycles_max);
  r.get("freeze_encoder", t.freeze_encoder);
  r.finish();
}

json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"pretrain_epochs", t.pretrain_epochs},
          {"learning_rate", t.learning_rate},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"epsilon", t.epsilon},
          {"patience", t.patience},
          {"clip_norm", t.clip_norm},
          {"cycles_per_epoch", t.cycles_per_epoch},
          {"val_cycles_max", t.val_cycles_max},
          {"freeze_encoder", t.freeze_encoder}};
}

}  // namespace

EncoderConfig parse_encoder(const json& j) {
  if (j.is_string()) {
    const std::string name = j.get<std::string>();
    if (name == "desk") return EncoderConfig::desk();
    if (name == "full") return EncoderConfig::full();
    throw std::invalid_argument("encoder preset must be 'desk' or 'full', got '" + name + "'");
  }
  EncoderConfig c = EncoderConfig::desk();
  ObjectReader r(j, "encoder");
  r.get("base_width", c.base_width);
  r.get("units_per_stage", c.units_per_stage);
  r.get("in_channels", c.in_channels);
  r.finish();
  c.validate();
  return c;
}

json to_json(const EncoderConfig& c) {
  return {{"base_width", c.base_width}, {"units_per_stage", c.units_per_stage}, {"in_channels", c.in_channels}};
}

PhantomSpec parse_phantom_spec(const json& j) {
  PhantomSpec s;
  ObjectReader r(j, "phantom");
  r.get("size", s.size);
  r.get("frames", s.frames);
  r.get("center_drift", s.center_drift);
  r.get("center_jitter", s.center_jitter);
  r.get("inner_radius", s.inner_radius);
  r.get("outer_radius", s.outer_radius);
  r.get("beat_amplitude", s.beat_amplitude);
  r.get("radius_jitter", s.radius_jitter);
  if (const json* c = r.child("thinning")) s.thinning = parse_sector(*c, r.path("thinning"));
  r.get("thinning_factor", s.thinning_factor);
  if (const json* c = r.child("lesion")) s.lesion = parse_sector(*c, r.path("lesion"));
  r.get("lesion_attenuation", s.lesion_attenuation);
  r.get("lesion_first_frame", s.lesion_first_frame);
  r.get("lesion_frame_count", s.lesion_frame_count);
  r.get("randomize_sectors", s.randomize_sectors);
  r.get("background", s.background);
  r.get("myocardium", s.myocardium);
  r.get("blood", s.blood);
  r.get("noise_sigma", s.noise_sigma);
  r.get("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

json to_json(const PhantomSpec& s) {
  return {{"size", s.size},
          {"frames", s.frames},
          {"center_drift", s.center_drift},
          {"center_jitter", s.center_jitter},
          {"inner_radius", s.inner_radius},
          {"outer_radius", s.outer_radius},
          {"beat_amplitude", s.beat_amplitude},
          {"radius_jitter", s.radius_jitter},
          {"thinning", sector_json(s.thinning)},
          {"thinning_factor", s.thinning_factor},
          {"lesion", sector_json(s.lesion)},
          {"lesion_attenuation", s.lesion_attenuation},
          {"lesion_first_frame", s.lesion_first_frame},
          {"lesion_frame_count", s.lesion_frame_count},
          {"randomize_sectors", s.randomize_sectors},
          {"background", s.background},
          {"myocardium", s.myocardium},
          {"blood", s.blood},
          {"noise_sigma", s.noise_sigma},
          {"seed", s.seed}};
}

void RunConfig::validate() const {
  if (data_dir.has_value() == phantom.has_value()) {
    throw std::invalid_argument("config: exactly one of 'data_dir' and 'phantom' must be given");
  }
  if (phantom && (subjects < 1 || cycles_per_subject < 1)) {
    throw std::invalid_argument("config: subjects and cycles_per_subject must be positive");
  }
  if (crop_size % 4 != 0) throw std::invalid_argument("config: crop_size must be divisible by 4");
  if (localize_window % 4 != 0) throw std::invalid_argument("config: localize.window must be divisible by 4");
  if (localize_window > 0 && localize.r_min >= localize.r_max) {
    throw std::invalid_argument("config: localize.r_min must be smaller than localize.r_max");
  }
  if (variants.empty()) throw std::invalid_argument("config: 'variants' must not be empty");
  if (ensemble_size < 1) throw std::invalid_argument("config: ensemble_size must be positive");
  if (jobs < 1) throw std::invalid_argument("config: jobs must be positive");
  train.validate();
}

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  ObjectReader r(j, "config");
  std::string data_dir;
  r.get("data_dir", data_dir);
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  if (const json* p = r.child("phantom")) cfg.phantom = parse_phantom_spec(*p);
  r.get("subjects", cfg.subjects);
  r.get("cycles_per_subject", cfg.cycles_per_subject);
  r.get("crop_size", cfg.crop_size);
  if (const json* l = r.child("localize")) parse_localize(*l, cfg);
  r.get("seed", cfg.seed);
  if (const json* v = r.child("variants")) {
    if (!v->is_array()) throw std::invalid_argument("config key 'config.variants': expected an array");
    cfg.variants.clear();
    for (const json& name : *v) {
      if (!name.is_string()) throw std::invalid_argument("config key 'config.variants': expected strings");
      cfg.variants.push_back(parse_variant(name.get<std::string>()));
    }
  }
  r.get("ensemble_size", cfg.ensemble_size);
  r.get("jobs", cfg.jobs);
  if (const json* e = r.child("encoder")) cfg.train.encoder = parse_encoder(*e);
  if (const json* c = r.child("cycle")) cfg.train.cycle = parse_cycle(*c);
  if (const json* t = r.child("train")) parse_train(*t, cfg.train);
  r.finish();
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json j;
  if (cfg.data_dir) j["data_dir"] = cfg.data_dir->string();
  if (cfg.phantom) {
    j["phantom"] = to_json(*cfg.phantom);
    j["subjects"] = cfg.subjects;
    j["cycles_per_subject"] = cfg.cycles_per_subject;
  }
  j["crop_size"] = cfg.crop_size;
  j["localize"] = {{"window", cfg.localize_window},
                   {"r_min", cfg.localize.r_min},
                   {"r_max", cfg.localize.r_max},
                   {"margin", cfg.localize.margin}};
  j["seed"] = cfg.seed;
  j["variants"] = json::array();
  for (Variant v : cfg.variants) j["variants"].push_back(to_string(v));
  j["ensemble_size"] = cfg.ensemble_size;
  j["jobs"] = cfg.jobs;
  j["encoder"] = to_json(cfg.train.encoder);
  j["cycle"] = {{"frames", cfg.train.cycle.frames}, {"passes", cfg.train.cycle.passes}};
  j["train"] = train_json(cfg.train);
  return j;
}

namespace {
json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + e.what());
  }
}
}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig cfg = parse_run_config(read_json_file(path));
  // Relative data paths resolve against the config file's directory.
  if (cfg.data_dir && cfg.data_dir->is_relative()) cfg.data_dir = path.parent_path() / *cfg.data_dir;
  return cfg;
}

PhantomSpec load_phantom_spec(const std::filesystem::path& path) { return parse_phantom_spec(read_json_file(path)); }

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::invalid_argument("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Dataset load_run_data(const RunConfig& cfg) {
  cfg.validate();
  std::vector<CineSequence> seqs = cfg.phantom ? phantom_dataset(*cfg.phantom, cfg.subjects, cfg.cycles_per_subject)
                                               : read_cine_dir(*cfg.data_dir);
  if (seqs.empty()) throw std::invalid_argument("no cycles found in " + cfg.data_dir->string());
  for (CineSequence& s : seqs) {
    if (!s.masks) throw std::invalid_argument("cycle " + s.id.str() + " has no masks; training needs masks");
    if (s.frames.size() != cfg.train.cycle.frames) {
      throw std::invalid_argument("cycle " + s.id.str() + " has " + std::to_string(s.frames.size()) +
                                  " frames; config expects " + std::to_string(cfg.train.cycle.frames));
    }
    if (cfg.crop_size > 0) s = preprocess_sequence(s, cfg.crop_size);
    if (cfg.localize_window > 0) s = localized_crop(s, cfg.localize_window, cfg.localize);
  }
  return index_dataset(std::move(seqs));
}

}  // namespace cinelstm
