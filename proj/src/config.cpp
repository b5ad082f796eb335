#include "triseg/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "triseg/error.hpp"

namespace triseg {

NLOHMANN_JSON_SERIALIZE_ENUM(BiasHook, {{BiasHook::None, "none"}, {BiasHook::ExternalPrecorrected, "external-precorrected"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Plane, {{Plane::Sagittal, "sagittal"}, {Plane::Coronal, "coronal"}, {Plane::Axial, "axial"}})
NLOHMANN_JSON_SERIALIZE_ENUM(FusionMode, {{FusionMode::MeanProbability, "mean-probability"},
                                          {FusionMode::MeanLogit, "mean-logit"}})

namespace {

using nlohmann::json;

// Field tables: one list of (key, member) per struct drives both directions.

template <class Fn>
void fields(PreprocessConfig& c, Fn&& f) {
  f("clip_lo_pct", c.clip_lo_pct);
  f("clip_hi_pct", c.clip_hi_pct);
  f("crop_shape", c.crop_shape);
  f("bias_hook", c.bias_hook);
  f("std_floor", c.std_floor);
  f("zscore_axis", c.zscore_axis);
}

template <class Fn>
void fields(AugmentConfig& c, Fn&& f) {
  f("p_hflip", c.p_hflip);
  f("p_elastic", c.p_elastic);
  f("p_rotate", c.p_rotate);
  f("p_shift_scale_rotate", c.p_shift_scale_rotate);
  f("p_gauss_noise", c.p_gauss_noise);
  f("p_gauss_blur", c.p_gauss_blur);
  f("rotate_limit_deg", c.rotate_limit_deg);
  f("ssr_rotate_limit_deg", c.ssr_rotate_limit_deg);
  f("shift_limit", c.shift_limit);
  f("scale_limit", c.scale_limit);
  f("elastic_sigma", c.elastic_sigma);
  f("elastic_max_displacement", c.elastic_max_displacement);
  f("noise_std_max", c.noise_std_max);
  f("blur_sigma_min", c.blur_sigma_min);
  f("blur_sigma_max", c.blur_sigma_max);
  f("seed", c.seed);
}

template <class Fn>
void fields(NetworkConfig& c, Fn&& f) {
  f("in_channels", c.in_channels);
  f("n_classes", c.n_classes);
  f("level_filters", c.level_filters);
  f("t_steps", c.t_steps);
  f("kernel", c.kernel);
}

template <class Fn>
void fields(LossConfig& c, Fn&& f) {
  f("epsilon", c.epsilon);
  f("alpha", c.alpha);
  f("gamma", c.gamma);
}

template <class Fn>
void fields(SegTrainConfig& c, Fn&& f) {
  f("plane", c.plane);
  f("lr", c.lr);
  f("batch_slabs", c.batch_slabs);
  f("slab_size", c.slab_size);
  f("iterations", c.iterations);
  f("seed", c.seed);
  f("loss", c.loss);
  f("augment", c.augment);
  f("checkpoint_every", c.checkpoint_every);
  f("grad_clip", c.grad_clip);
}

template <class Fn>
void fields(SurvTrainConfig& c, Fn&& f) {
  f("train_fraction", c.train_fraction);
  f("epochs", c.epochs);
  f("lr", c.lr);
  f("batch_size", c.batch_size);
  f("dropout", c.dropout);
  f("short_below_days", c.short_below_days);
  f("long_above_days", c.long_above_days);
  f("head_hidden", c.head_hidden);
  f("head_kernel", c.head_kernel);
  f("seed", c.seed);
}

template <class Fn>
void fields(PlaneSchedule& c, Fn&& f) {
  f("lr", c.lr);
  f("batch_slabs", c.batch_slabs);
  f("slab_size", c.slab_size);
  f("iterations", c.iterations);
  f("checkpoint_every", c.checkpoint_every);
  f("grad_clip", c.grad_clip);
}

template <class Fn>
void fields(MetricConventions& c, Fn&& f) {
  f("both_empty_dsc", c.both_empty_dsc);
  f("both_empty_hd", c.both_empty_hd);
  f("one_empty_dsc", c.one_empty_dsc);
  f("one_empty_hd", c.one_empty_hd);
}

template <class Fn>
void fields(CropManifest& c, Fn&& f) {
  f("source_shape", c.source_shape);
  f("crop_shape", c.crop_shape);
  f("offset", c.offset);
}

template <class C>
void write_fields(json& j, const C& c) {
  j = json::object();
  fields(const_cast<C&>(c), [&](const char* key, const auto& member) { j[key] = member; });
}

template <class C>
void read_fields(const json& j, C& c, const char* what) {
  require(j.is_object(), ErrorCode::ConfigError, std::string(what) + " must be an object");
  std::set<std::string> known;
  fields(c, [&](const char* key, auto&) { known.insert(key); });
  for (const auto& [key, value] : j.items()) {
    require(known.contains(key), ErrorCode::ConfigError, "unknown key '" + key + "' in " + what);
  }
  fields(c, [&](const char* key, auto& member) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(member);
    } catch (const json::exception& e) {
      fail(ErrorCode::ConfigError, std::string(what) + "." + key + ": " + e.what());
    }
  });
}

}  // namespace

void to_json(json& j, const Dims3& d) { j = json::array({d.x, d.y, d.z}); }
void from_json(const json& j, Dims3& d) {
  require(j.is_array() && j.size() == 3, ErrorCode::ConfigError, "shape must be a 3-element array");
  d = {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

void to_json(json& j, const PreprocessConfig& c) { write_fields(j, c); }
void from_json(const json& j, PreprocessConfig& c) { read_fields(j, c, "preprocess"); }
void to_json(json& j, const AugmentConfig& c) { write_fields(j, c); }
void from_json(const json& j, AugmentConfig& c) { read_fields(j, c, "augment"); }
void to_json(json& j, const NetworkConfig& c) { write_fields(j, c); }
void from_json(const json& j, NetworkConfig& c) { read_fields(j, c, "network"); }
void to_json(json& j, const LossConfig& c) { write_fields(j, c); }
void from_json(const json& j, LossConfig& c) { read_fields(j, c, "loss"); }
void to_json(json& j, const SegTrainConfig& c) { write_fields(j, c); }
void from_json(const json& j, SegTrainConfig& c) { read_fields(j, c, "train"); }
void to_json(json& j, const SurvTrainConfig& c) { write_fields(j, c); }
void from_json(const json& j, SurvTrainConfig& c) { read_fields(j, c, "survival"); }
void to_json(json& j, const PlaneSchedule& c) { write_fields(j, c); }
void from_json(const json& j, PlaneSchedule& c) { read_fields(j, c, "plane schedule"); }
void to_json(json& j, const MetricConventions& c) { write_fields(j, c); }
void from_json(const json& j, MetricConventions& c) { read_fields(j, c, "metrics"); }
void to_json(json& j, const CropManifest& c) { write_fields(j, c); }
void from_json(const json& j, CropManifest& c) { read_fields(j, c, "crop"); }

std::map<Plane, PlaneSchedule> RunConfig::default_planes() {
  std::map<Plane, PlaneSchedule> out;
  for (Plane p : kPlanes) {
    PlaneSchedule s;
    s.iterations = default_iterations(p);
    out[p] = s;
  }
  return out;
}

SegTrainConfig RunConfig::seg_config(Plane plane) const {
  SegTrainConfig c = SegTrainConfig::for_plane(plane);
  if (auto it = planes.find(plane); it != planes.end()) {
    c.lr = it->second.lr;
    c.batch_slabs = it->second.batch_slabs;
    c.slab_size = it->second.slab_size;
    c.iterations = it->second.iterations;
    c.checkpoint_every = it->second.checkpoint_every;
    c.grad_clip = it->second.grad_clip;
  }
  c.seed = seed;
  c.loss = loss;
  c.augment = augment;
  return c;
}

void RunConfig::validate() const {
  require(workers >= 1, ErrorCode::ConfigError, "workers must be >= 1");
  require(infer_batch >= 1, ErrorCode::ConfigError, "infer_batch must be >= 1");
  preprocess.validate();
  augment.validate();
  network.validate();
  loss.validate();
  survival.validate();
  for (Plane p : kPlanes) seg_config(p).validate();
}

void to_json(json& j, const RunConfig& c) {
  j = json::object();
  j["data_root"] = c.data_root.string();
  j["output_dir"] = c.output_dir.string();
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["preprocess"] = c.preprocess;
  j["augment"] = c.augment;
  j["network"] = c.network;
  j["loss"] = c.loss;
  json planes = json::object();
  for (const auto& [p, s] : c.planes) planes[std::string(plane_name(p))] = s;
  j["planes"] = planes;
  j["survival"] = c.survival;
  j["fusion"] = c.fusion;
  j["infer_batch"] = c.infer_batch;
  j["metrics"] = c.metrics;
}

void from_json(const json& j, RunConfig& c) {
  require(j.is_object(), ErrorCode::ConfigError, "run config must be a JSON object");
  static const std::set<std::string> known{"data_root", "output_dir", "seed",     "workers", "preprocess",
                                           "augment",   "network",    "loss",     "planes",  "survival",
                                           "fusion",    "infer_batch", "metrics"};
  for (const auto& [key, value] : j.items()) {
    require(known.contains(key), ErrorCode::ConfigError, "unknown key '" + key + "' in run config");
  }
  try {
    if (j.contains("data_root")) c.data_root = j.at("data_root").get<std::string>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("workers")) c.workers = j.at("workers").get<int>();
    if (j.contains("infer_batch")) c.infer_batch = j.at("infer_batch").get<int>();
    if (j.contains("fusion")) {
      const auto name = j.at("fusion").get<std::string>();
      require(name == "mean-probability" || name == "mean-logit", ErrorCode::ConfigError,
              "fusion must be mean-probability or mean-logit");
      c.fusion = j.at("fusion").get<FusionMode>();
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("run config: ") + e.what());
  }
  if (j.contains("preprocess")) from_json(j.at("preprocess"), c.preprocess);
  if (j.contains("augment")) from_json(j.at("augment"), c.augment);
  if (j.contains("network")) from_json(j.at("network"), c.network);
  if (j.contains("loss")) from_json(j.at("loss"), c.loss);
  if (j.contains("survival")) from_json(j.at("survival"), c.survival);
  if (j.contains("metrics")) from_json(j.at("metrics"), c.metrics);
  if (j.contains("planes")) {
    const json& planes = j.at("planes");
    require(planes.is_object(), ErrorCode::ConfigError, "planes must be an object");
    for (const auto& [name, value] : planes.items()) {
      const Plane p = parse_plane(name);
      from_json(value, c.planes[p]);
    }
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::IoError, "failed writing " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig cfg;
  from_json(read_json(path), cfg);
  cfg.validate();
  return cfg;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) { write_json(path, json(cfg)); }

}  // namespace triseg
