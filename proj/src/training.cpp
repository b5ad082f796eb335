#include "triseg/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "triseg/archive.hpp"
#include "triseg/config.hpp"
#include "triseg/error.hpp"

namespace triseg {

namespace {

constexpr const char* kCheckpointKind = "triseg-seg-checkpoint";
constexpr int kCheckpointVersion = 1;
constexpr const char* kLossHeader = "iteration,loss,dice_component,focal_component,wall_time";

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json config_section(const NetworkConfig& net, const SegTrainConfig& train) {
  return {{"network", net}, {"train", train}};
}

bool finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

LabelSlice label_slice(const Tensor& labels, int n) {
  LabelSlice s{labels.h(), labels.w(), {}};
  s.ids.resize(labels.plane());
  const double* src = labels.sample(n);
  for (std::size_t i = 0; i < s.ids.size(); ++i) s.ids[i] = static_cast<std::uint8_t>(src[i]);
  return s;
}

}  // namespace

int default_iterations(Plane plane) { return plane == Plane::Sagittal ? 1300 : 800; }

SegTrainConfig SegTrainConfig::for_plane(Plane plane) {
  SegTrainConfig c;
  c.plane = plane;
  c.iterations = default_iterations(plane);
  return c;
}

void SegTrainConfig::validate() const {
  require(iterations >= 1, ErrorCode::ConfigError, "iterations must be >= 1");
  require(batch_slabs >= 1, ErrorCode::ConfigError, "batch_slabs must be >= 1");
  require(slab_size >= 1, ErrorCode::ConfigError, "slab_size must be >= 1");
  require(checkpoint_every >= 1, ErrorCode::ConfigError, "checkpoint_every must be >= 1");
  require(std::isfinite(lr) && lr >= 0.0, ErrorCode::ConfigError, "lr must be finite and non-negative");
  require(grad_clip >= 0.0, ErrorCode::ConfigError, "grad_clip must be >= 0");
  loss.validate();
  augment.validate();
}

PlanarSlab sample_slab(const CaseBundle& c, Plane plane, Rng& rng, int slab_size) {
  require(slab_size >= 1, ErrorCode::ConfigError, "slab_size must be >= 1");
  const int len = c.shape()[plane_axis(plane)];
  require(len >= slab_size, ErrorCode::GeometryMismatch,
          c.case_id + ": " + std::string(plane_name(plane)) + " axis has " + std::to_string(len) +
              " slices, fewer than the slab size " + std::to_string(slab_size));
  PlanarSlab slab;
  slab.plane = plane;
  slab.start_index = uniform_int(rng, 0, len - slab_size);
  slab.data = slice_range(c, plane, slab.start_index, slab_size);
  if (c.labels) slab.labels = slice_labels(*c.labels, plane, slab.start_index, slab_size);
  return slab;
}

Batch assemble_batch(const std::vector<CaseBundle>& dataset, const SegTrainConfig& cfg, std::int64_t iteration) {
  require(!dataset.empty(), ErrorCode::InvalidInput, "training dataset is empty");
  const auto [h, w] = slice_dims(dataset.front().shape(), cfg.plane);
  const int n = cfg.batch_slabs * cfg.slab_size;
  Batch b{Tensor({n, 3, h, w}), Tensor({n, 1, h, w})};
  for (int s = 0; s < cfg.batch_slabs; ++s) {
    Rng rng = fork_rng(cfg.seed, static_cast<std::uint64_t>(iteration) * cfg.batch_slabs + s);
    const int pick = uniform_int(rng, 0, static_cast<int>(dataset.size()) - 1);
    const CaseBundle& c = dataset[static_cast<std::size_t>(pick)];
    require(c.labels.has_value(), ErrorCode::InvalidInput, c.case_id + ": training case has no labels");
    require(slice_dims(c.shape(), cfg.plane) == std::make_pair(h, w), ErrorCode::GeometryMismatch,
            c.case_id + ": slice size differs from the rest of the batch");
    const PlanarSlab slab = sample_slab(c, cfg.plane, rng, cfg.slab_size);
    const std::size_t img_stride = 3 * static_cast<std::size_t>(h) * w;
    for (int k = 0; k < cfg.slab_size; ++k) {
      Tensor image({3, h, w}, std::vector<double>(slab.data.sample(k), slab.data.sample(k) + img_stride));
      const AugmentedPair aug = augment_pair(image, label_slice(*slab.labels, k), cfg.augment, rng);
      const int row = s * cfg.slab_size + k;
      std::copy(aug.image.storage().begin(), aug.image.storage().end(), b.images.sample(row));
      double* dst = b.labels.sample(row);
      for (std::size_t i = 0; i < aug.label.ids.size(); ++i) dst[i] = aug.label.ids[i];
    }
  }
  return b;
}

std::vector<Tensor*> parameter_list(NetworkParams& params) {
  std::vector<Tensor*> out;
  visit_params(params, [&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<const Tensor*> parameter_list(const NetworkParams& params) {
  std::vector<const Tensor*> out;
  visit_params(params, [&](const std::string&, const Tensor& t) { out.push_back(&t); });
  return out;
}

StepResult train_step(NetworkParams& params, AdamState& opt, const Batch& batch, const SegTrainConfig& cfg) {
  NetworkTrace trace;
  const Tensor probs = network_forward(batch.images, params, &trace);
  const Tensor target = one_hot(batch.labels, params.config.n_classes);
  Tensor dprobs(probs.shape());
  StepResult r;
  r.loss = total_loss(probs, target, cfg.loss, &dprobs);
  require(std::isfinite(r.loss.total) && finite(dprobs), ErrorCode::NumericalDivergence,
          "non-finite loss (" + std::to_string(r.loss.total) + ")");

  NetworkParams grads = params.zeros_like();
  network_backward(dprobs, params, trace, grads);
  auto glist = parameter_list(std::as_const(grads));
  r.grad_norm = global_norm(glist);
  require(std::isfinite(r.grad_norm), ErrorCode::NumericalDivergence, "non-finite gradient");
  if (cfg.grad_clip > 0.0 && r.grad_norm > cfg.grad_clip) {
    const double scale = cfg.grad_clip / r.grad_norm;
    visit_params(grads, [&](const std::string&, Tensor& t) {
      for (double& v : t.values()) v *= scale;
    });
  }
  adam_update(parameter_list(params), glist, opt, cfg.lr);
  return r;
}

void save_checkpoint(const std::filesystem::path& path, const SegCheckpoint& ckpt) {
  Archive a;
  const auto section = config_section(ckpt.params.config, ckpt.train);
  a.manifest = {{"kind", kCheckpointKind},
                {"version", kCheckpointVersion},
                {"plane", plane_name(ckpt.train.plane)},
                {"iteration", ckpt.iteration},
                {"seed", ckpt.train.seed},
                {"config", section},
                {"config_hash", fnv1a_hex(section.dump())},
                {"adam",
                 {{"step", ckpt.opt.step},
                  {"beta1", ckpt.opt.beta1},
                  {"beta2", ckpt.opt.beta2},
                  {"eps", ckpt.opt.eps}}}};
  std::size_t k = 0;
  require(ckpt.opt.m.size() == ckpt.opt.v.size(), ErrorCode::ShapeError, "optimizer state is inconsistent");
  const bool with_opt = !ckpt.opt.m.empty();
  visit_params(ckpt.params, [&](const std::string& name, const Tensor& t) {
    a.arrays["param." + name] = t;
    if (with_opt) {
      require(k < ckpt.opt.m.size(), ErrorCode::ShapeError, "optimizer state is shorter than the parameter list");
      a.arrays["adam.m." + name] = ckpt.opt.m[k];
      a.arrays["adam.v." + name] = ckpt.opt.v[k];
    }
    ++k;
  });
  write_archive(path, a);
}

SegCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  const auto& m = a.manifest;
  require(m.value("kind", "") == kCheckpointKind, ErrorCode::MissingModel,
          path.string() + " is not a segmentation checkpoint");
  require(m.value("version", 0) == kCheckpointVersion, ErrorCode::MissingModel,
          path.string() + ": unsupported checkpoint version");
  SegCheckpoint ckpt;
  NetworkConfig net;
  try {
    from_json(m.at("config").at("network"), net);
    from_json(m.at("config").at("train"), ckpt.train);
    ckpt.iteration = m.at("iteration").get<int>();
    ckpt.opt.step = m.at("adam").at("step").get<std::int64_t>();
    ckpt.opt.beta1 = m.at("adam").at("beta1").get<double>();
    ckpt.opt.beta2 = m.at("adam").at("beta2").get<double>();
    ckpt.opt.eps = m.at("adam").at("eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoError, path.string() + ": bad manifest: " + e.what());
  }
  ckpt.params = init_network(net, 0);
  const bool with_opt = a.arrays.contains("adam.m." + std::string("head.weight"));
  visit_params(ckpt.params, [&](const std::string& name, Tensor& t) {
    const Tensor& src = a.array("param." + name);
    require(src.shape() == t.shape(), ErrorCode::ShapeError, "checkpoint array " + name + " has shape " +
                                                                 shape_string(src.shape()) + ", expected " +
                                                                 shape_string(t.shape()));
    t = src;
    if (with_opt) {
      ckpt.opt.m.push_back(a.array("adam.m." + name));
      ckpt.opt.v.push_back(a.array("adam.v." + name));
    }
  });
  return ckpt;
}

NetworkParams load_network(const std::filesystem::path& path) { return load_checkpoint(path).params; }

TrainResult train_plane(const std::vector<CaseBundle>& dataset, const NetworkConfig& net, const SegTrainConfig& cfg,
                        const TrainOptions& options) {
  cfg.validate();
  net.validate();
  require(!dataset.empty(), ErrorCode::InvalidInput, "training dataset is empty");

  const auto start_time = std::chrono::steady_clock::now();
  const bool on_disk = !options.out_dir.empty();
  const auto ckpt_path = options.out_dir / "checkpoint.bin";
  const auto csv_path = options.out_dir / "loss.csv";

  TrainResult result;
  SegCheckpoint& ck = result.checkpoint;
  double wall_offset = 0.0;
  std::vector<std::string> kept_rows;

  if (on_disk && options.resume && std::filesystem::exists(ckpt_path)) {
    ck = load_checkpoint(ckpt_path);
    const auto want = fnv1a_hex(config_section(net, cfg).dump());
    const auto have = fnv1a_hex(config_section(ck.params.config, ck.train).dump());
    require(want == have, ErrorCode::ConfigError,
            ckpt_path.string() + " was written with a different configuration; remove it or change out_dir");
    if (ck.opt.m.empty()) ck.opt = init_adam(parameter_list(std::as_const(ck.params)));
    // Rows past the checkpoint belong to iterations that will be replayed.
    std::ifstream in(csv_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream row(line);
      std::string it_str, field;
      std::getline(row, it_str, ',');
      if (std::stoi(it_str) > ck.iteration) break;
      kept_rows.push_back(line);
      for (int i = 0; i < 4; ++i) std::getline(row, field, ',');
      wall_offset = std::stod(field);
    }
  } else {
    ck.params = init_network(net, cfg.seed);
    ck.opt = init_adam(parameter_list(std::as_const(ck.params)));
    ck.iteration = 0;
  }
  ck.train = cfg;

  std::ofstream csv;
  if (on_disk) {
    std::filesystem::create_directories(options.out_dir);
    csv.open(csv_path, std::ios::trunc);
    require(static_cast<bool>(csv), ErrorCode::IoError, "cannot write " + csv_path.string());
    csv << kLossHeader << '\n';
    for (const auto& r : kept_rows) csv << r << '\n';
    csv.flush();
  }

  const int end = options.stop_after ? std::min(cfg.iterations, *options.stop_after) : cfg.iterations;
  while (ck.iteration < end) {
    const Batch batch = assemble_batch(dataset, cfg, ck.iteration);
    const StepResult step = train_step(ck.params, ck.opt, batch, cfg);
    ++ck.iteration;
    result.steps.push_back(step);
    if (options.on_step) options.on_step(ck.iteration, step);
    if (on_disk) {
      const double wall =
          wall_offset + std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
      char buf[160];
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.3f", ck.iteration, step.loss.total, step.loss.dice,
                    step.loss.focal, wall);
      csv << buf << '\n';
      csv.flush();
      if (ck.iteration % cfg.checkpoint_every == 0 || ck.iteration == end) save_checkpoint(ckpt_path, ck);
    }
  }
  return result;
}

}  // namespace triseg
