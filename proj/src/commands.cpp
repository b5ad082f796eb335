#include "triseg/commands.hpp"

#include <png.h>

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "triseg/error.hpp"

namespace triseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCropFile = "crop.json";
constexpr const char* kClinicalFile = "survival_info.csv";

std::optional<fs::path> raw_volume(const fs::path& root, const std::string& id, Modality m) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    const fs::path p = root / id / (id + "_" + std::string(modality_suffix(m)) + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

// Sizes and modification times of the raw case files plus the preprocessing
// config; equal fingerprints mean the preprocessed output is current.
json input_fingerprint(const fs::path& case_dir, const PreprocessConfig& cfg) {
  json files = json::array();
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(case_dir))
    if (e.is_regular_file()) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  for (const auto& p : entries) {
    const auto mtime = fs::last_write_time(p).time_since_epoch().count();
    files.push_back({{"name", p.filename().string()}, {"size", fs::file_size(p)}, {"mtime", mtime}});
  }
  return {{"preprocess", cfg}, {"files", files}};
}

std::vector<std::string> resolve_ids(const std::vector<std::string>& requested, const fs::path& root,
                                     const char* what) {
  std::vector<std::string> ids = requested.empty() ? list_cases(root) : requested;
  require(!ids.empty(), ErrorCode::InvalidInput, std::string("no ") + what + " found under " + root.string());
  return ids;
}

CropManifest read_crop(const fs::path& case_dir) {
  const json j = read_json(case_dir / kCropFile);
  CropManifest m;
  from_json(j.at("crop"), m);
  return m;
}

// Outcome of one case: status on success, error text otherwise.
CaseOutcome run_case(const std::string& id, const std::function<std::string()>& fn) {
  try {
    return {id, fn(), std::nullopt};
  } catch (const std::exception& e) {
    return {id, "failed", std::string(e.what())};
  }
}

std::array<NetworkParams, 3> load_plane_models(const RunPaths& paths) {
  std::array<NetworkParams, 3> out;
  for (Plane p : kPlanes) out[static_cast<std::size_t>(p)] = load_network(paths.checkpoint(p));
  return out;
}

std::array<Tensor, 3> case_bottlenecks(const RunConfig& cfg, const CaseBundle& c,
                                       const std::array<NetworkParams, 3>& seg) {
  std::array<Tensor, 3> out;
  for (Plane p : kPlanes) {
    const auto k = static_cast<std::size_t>(p);
    out[k] = plane_bottlenecks(c, p, seg[k], cfg.seg_config(p).slab_size);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorCode::IoError, "failed writing " + path.string());
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

const std::array<std::pair<const char*, RegionMetrics CaseMetrics::*>, 3> kRegions{
    {{"WT", &CaseMetrics::wt}, {"TC", &CaseMetrics::tc}, {"ET", &CaseMetrics::et}}};

}  // namespace

bool CommandReport::ok() const {
  return std::all_of(cases.begin(), cases.end(), [](const CaseOutcome& c) { return !c.error; });
}

void echo_config(const fs::path& dir, const RunConfig& cfg) { write_json(dir / "config.json", json(cfg)); }

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<PhantomSpec> cmd_make_phantoms(const fs::path& root, int count, std::uint64_t seed, Dims3 shape) {
  require(count >= 1, ErrorCode::ConfigError, "phantom count must be >= 1");
  auto specs = phantom_series(count, seed, shape);
  write_phantom_dataset(root, specs);
  return specs;
}

CommandReport cmd_preprocess(const RunConfig& cfg, const std::vector<std::string>& case_ids) {
  cfg.validate();
  const RunPaths paths{cfg.output_dir};
  const auto ids = resolve_ids(case_ids, cfg.data_root, "cases");
  const fs::path out = paths.preprocessed();
  fs::create_directories(out);
  echo_config(out, cfg);
  if (fs::exists(cfg.data_root / kClinicalFile)) {
    fs::copy_file(cfg.data_root / kClinicalFile, out / kClinicalFile, fs::copy_options::overwrite_existing);
  }

  CommandReport report;
  report.cases.resize(ids.size());
  parallel_for(ids.size(), cfg.workers, [&](std::size_t i) {
    const std::string& id = ids[i];
    report.cases[i] = run_case(id, [&] {
      const fs::path src = cfg.data_root / id;
      require(fs::is_directory(src), ErrorCode::IoError, "no case directory " + src.string());
      const json fingerprint = input_fingerprint(src, cfg.preprocess);
      const fs::path dst = out / id;
      if (fs::exists(dst / kCropFile)) {
        try {
          if (read_json(dst / kCropFile).at("fingerprint") == fingerprint) return std::string("skipped");
        } catch (const std::exception&) {
          // Unreadable manifest: rebuild the case.
        }
      }
      const CaseBundle raw = load_case(cfg.data_root, id);
      const PreprocessedCase pre = preprocess_case(raw, cfg.preprocess);
      fs::create_directories(dst);
      fs::remove(dst / kCropFile);
      for (Modality m : kInputModalities) {
        save_volume(dst / (id + "_" + std::string(modality_suffix(m)) + ".nii.gz"), pre.bundle.volume(m),
                    pre.bundle.geometry);
      }
      if (pre.bundle.labels) {
        const fs::path seg = save_segmentation(id, *pre.bundle.labels, dst, pre.bundle.geometry);
        fs::rename(seg, dst / (id + "_seg.nii.gz"));
      }
      const auto& sp = pre.source_geometry.spacing;
      write_json(dst / kCropFile, {{"case_id", id},
                                   {"crop", pre.crop},
                                   {"source_spacing", {sp[0], sp[1], sp[2]}},
                                   {"fingerprint", fingerprint}});
      return std::string("written");
    });
  });
  return report;
}

std::vector<CaseBundle> load_preprocessed(const RunConfig& cfg, const std::vector<std::string>& case_ids) {
  const fs::path root = RunPaths{cfg.output_dir}.preprocessed();
  require(fs::is_directory(root), ErrorCode::IoError,
          "no preprocessed data at " + root.string() + "; run preprocess first");
  const auto ids = resolve_ids(case_ids, root, "preprocessed cases");
  std::vector<CaseBundle> out(ids.size());
  parallel_for(ids.size(), cfg.workers, [&](std::size_t i) { out[i] = load_case(root, ids[i]); });
  return out;
}

TrainResult cmd_train_seg(const RunConfig& cfg, Plane plane, const TrainSegOptions& options) {
  cfg.validate();
  const RunPaths paths{cfg.output_dir};
  const auto data = load_preprocessed(cfg);
  const fs::path dir = paths.model_dir(plane);
  fs::create_directories(dir);
  echo_config(dir, cfg);
  TrainOptions opts;
  opts.out_dir = dir;
  opts.resume = options.resume;
  opts.stop_after = options.stop_after;
  opts.on_step = options.on_step;
  return train_plane(data, cfg.network, cfg.seg_config(plane), opts);
}

SurvivalFit cmd_train_surv(const RunConfig& cfg) {
  cfg.validate();
  const RunPaths paths{cfg.output_dir};
  const auto seg = load_plane_models(paths);
  const auto data = load_preprocessed(cfg);
  std::vector<const CaseBundle*> usable;
  for (const auto& c : data)
    if (c.clinical.age && c.clinical.survival_days && *c.clinical.survival_days > 0.0) usable.push_back(&c);
  require(usable.size() >= 2, ErrorCode::InsufficientData,
          "survival training needs at least 2 cases with age and numeric survival, found " +
              std::to_string(usable.size()));

  std::vector<SurvivalCase> cases(usable.size());
  parallel_for(usable.size(), cfg.workers, [&](std::size_t i) {
    const CaseBundle& c = *usable[i];
    cases[i] = {c.case_id, case_bottlenecks(cfg, c, seg), *c.clinical.age, *c.clinical.survival_days};
  });
  SurvivalFit fit = train_survival_joint(cases, cfg.survival);

  const fs::path dir = paths.survival_dir();
  fs::create_directories(paths.features());
  echo_config(dir, cfg);
  save_survival_model(paths.survival_model(), fit.model);
  for (const auto& c : cases) {
    write_json(paths.features() / (c.case_id + ".json"), {{"case_id", c.case_id},
                                                          {"features", case_features(fit.model, c.bottlenecks)},
                                                          {"age", c.age},
                                                          {"survival_days", c.survival_days}});
  }
  auto metrics_json = [](const SurvivalMetrics& m) {
    return json{{"mse", m.mse}, {"spearman_r", m.spearman_r}, {"accuracy", m.accuracy}};
  };
  json report{{"train_ids", fit.report.train_ids},
              {"test_ids", fit.report.test_ids},
              {"train", metrics_json(fit.report.train)},
              {"short_below_days", cfg.survival.short_below_days},
              {"long_above_days", cfg.survival.long_above_days},
              {"epoch_loss", fit.report.epoch_loss}};
  if (fit.report.test) report["test"] = metrics_json(*fit.report.test);
  write_json(dir / "report.json", report);
  return fit;
}

CommandReport cmd_infer(const RunConfig& cfg, const std::vector<std::string>& case_ids,
                        const std::vector<Plane>& planes) {
  cfg.validate();
  require(!planes.empty(), ErrorCode::ConfigError, "at least one plane is needed for inference");
  const RunPaths paths{cfg.output_dir};
  std::vector<NetworkParams> models;
  for (Plane p : planes) models.push_back(load_network(paths.checkpoint(p)));
  const fs::path pre_root = paths.preprocessed();
  require(fs::is_directory(pre_root), ErrorCode::IoError,
          "no preprocessed data at " + pre_root.string() + "; run preprocess first");
  const auto ids = resolve_ids(case_ids, pre_root, "preprocessed cases");
  const fs::path out = paths.predictions();
  fs::create_directories(out);
  echo_config(out, cfg);

  CommandReport report;
  report.cases.resize(ids.size());
  parallel_for(ids.size(), cfg.workers, [&](std::size_t i) {
    const std::string& id = ids[i];
    report.cases[i] = run_case(id, [&] {
      const CaseBundle c = load_case(pre_root, id);
      const CropManifest crop = read_crop(pre_root / id);
      std::vector<ProbabilityVolume> vols;
      for (std::size_t k = 0; k < planes.size(); ++k)
        vols.push_back(infer_plane(c, planes[k], models[k], cfg.infer_batch));
      const LabelVolume labels = finalize(fuse(vols, cfg.fusion), crop);

      VolumeGeometry geometry;
      if (const auto flair = raw_volume(cfg.data_root, id, Modality::FLAIR)) {
        geometry = read_nifti(*flair).geometry;
      } else {
        geometry = c.geometry;
        const json sp = read_json(pre_root / id / kCropFile).at("source_spacing");
        geometry.spacing = {sp[0].get<float>(), sp[1].get<float>(), sp[2].get<float>()};
      }
      geometry.dims = crop.source_shape;
      save_segmentation(id, labels, out, geometry);
      return std::string("written");
    });
  });
  return report;
}

EvaluationReport cmd_evaluate(const RunConfig& cfg, const fs::path& pred_dir, const fs::path& gt_dir,
                              const std::vector<Plane>& overlay_planes) {
  const auto pred_ids = list_label_cases(pred_dir);
  const auto gt_ids = list_label_cases(gt_dir);
  if (pred_ids != gt_ids) {
    std::vector<std::string> only_pred, only_gt;
    std::set_difference(pred_ids.begin(), pred_ids.end(), gt_ids.begin(), gt_ids.end(), std::back_inserter(only_pred));
    std::set_difference(gt_ids.begin(), gt_ids.end(), pred_ids.begin(), pred_ids.end(), std::back_inserter(only_gt));
    std::string msg = "prediction and ground-truth case sets differ;";
    for (const auto& id : only_pred) msg += " only in predictions: " + id + ";";
    for (const auto& id : only_gt) msg += " only in ground truth: " + id + ";";
    fail(ErrorCode::InvalidInput, msg);
  }
  require(!pred_ids.empty(), ErrorCode::InvalidInput, "no label files in " + pred_dir.string());

  const RunPaths paths{cfg.output_dir};
  const fs::path out = paths.evaluation();
  fs::create_directories(out);
  echo_config(out, cfg);

  EvaluationReport report;
  report.rows.resize(pred_ids.size());
  parallel_for(pred_ids.size(), cfg.workers, [&](std::size_t i) {
    const std::string& id = pred_ids[i];
    const LabelVolume pred = load_labels(*find_label_file(pred_dir, id));
    const LabelVolume gt = load_labels(*find_label_file(gt_dir, id));
    report.rows[i] = {id, evaluate_case(pred, gt, cfg.metrics)};
    if (overlay_planes.empty()) return;
    const auto flair_path = raw_volume(cfg.data_root, id, Modality::FLAIR);
    require(flair_path.has_value(), ErrorCode::IoError, id + ": no FLAIR volume under " + cfg.data_root.string());
    const NiftiImage img = read_nifti(*flair_path);
    Volume<float> flair(img.geometry.dims);
    for (std::size_t v = 0; v < flair.size(); ++v) flair[v] = static_cast<float>(img.voxels[v]);
    require(flair.dims() == gt.voxels.dims(), ErrorCode::GeometryMismatch, id + ": FLAIR and labels differ in shape");
    for (Plane p : overlay_planes) {
      // Slice with the most ground-truth tumour, the middle one when there is none.
      const int axis = plane_axis(p);
      const int len = gt.voxels.dims()[axis];
      std::vector<int> count(static_cast<std::size_t>(len), 0);
      const Dims3 d = gt.voxels.dims();
      for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
          for (int x = 0; x < d.x; ++x)
            if (gt.voxels.at(x, y, z) != 0) ++count[static_cast<std::size_t>(axis == 0 ? x : (axis == 1 ? y : z))];
      int best = len / 2;
      for (int k = 0; k < len; ++k)
        if (count[static_cast<std::size_t>(k)] > count[static_cast<std::size_t>(best)]) best = k;
      write_overlay_png(out / "overlays" / (id + "_" + std::string(plane_name(p)) + ".png"), flair, gt, &pred, p,
                        best);
    }
  });

  const double n = static_cast<double>(report.rows.size());
  for (const auto& [name, member] : kRegions) {
    RegionMetrics& m = report.mean.*member;
    m = {};
    for (const auto& row : report.rows) {
      const RegionMetrics& r = row.metrics.*member;
      m.dsc += r.dsc / n;
      m.hd95 += r.hd95 / n;
      m.hausdorff += r.hausdorff / n;
      m.sensitivity += r.sensitivity / n;
      m.specificity += r.specificity / n;
    }
  }

  std::string per_case = "case_id,region,dsc,hd95,hausdorff,sensitivity,specificity\n";
  for (const auto& row : report.rows)
    for (const auto& [name, member] : kRegions) {
      const RegionMetrics& r = row.metrics.*member;
      per_case += row.case_id + "," + name + "," + fmt(r.dsc) + "," + fmt(r.hd95) + "," + fmt(r.hausdorff) + "," +
                  fmt(r.sensitivity) + "," + fmt(r.specificity) + "\n";
    }
  write_text(out / "metrics.csv", per_case);
  std::string summary = "region,dsc,hd95,specificity,sensitivity\n";
  for (const auto& [name, member] : kRegions) {
    const RegionMetrics& r = report.mean.*member;
    summary += std::string(name) + "," + fmt(r.dsc) + "," + fmt(r.hd95) + "," + fmt(r.specificity) + "," +
               fmt(r.sensitivity) + "\n";
  }
  write_text(out / "summary.csv", summary);
  return report;
}

SurvivalPredictionReport cmd_predict_surv(const RunConfig& cfg, const std::vector<std::string>& case_ids,
                                          bool evaluate) {
  cfg.validate();
  const RunPaths paths{cfg.output_dir};
  const SurvivalModel model = load_survival_model(paths.survival_model());
  const auto seg = load_plane_models(paths);
  const fs::path pre_root = paths.preprocessed();
  require(fs::is_directory(pre_root), ErrorCode::IoError,
          "no preprocessed data at " + pre_root.string() + "; run preprocess first");
  const auto ids = resolve_ids(case_ids, pre_root, "preprocessed cases");

  SurvivalPredictionReport report;
  report.rows.resize(ids.size());
  parallel_for(ids.size(), cfg.workers, [&](std::size_t i) {
    SurvivalPrediction& row = report.rows[i];
    row.case_id = ids[i];
    try {
      const CaseBundle c = load_case(pre_root, ids[i]);
      row.target = c.clinical.survival_days;
      if (!c.clinical.age) {
        row.error = "missing age";
        return;
      }
      const auto features = case_features(model, case_bottlenecks(cfg, c, seg));
      row.days = predict_days(model, features, *c.clinical.age);
      row.survival_class = classify_survival(std::max(*row.days, 0.0), model.config);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });

  std::string csv = "case_id,predicted_days,class,error\n";
  std::vector<double> preds, targets;
  for (const auto& r : report.rows) {
    csv += r.case_id + "," + (r.days ? fmt(*r.days) : "") + "," +
           (r.survival_class ? std::string(survival_class_name(*r.survival_class)) : "") + "," + r.error + "\n";
    if (r.days && r.target) {
      preds.push_back(*r.days);
      targets.push_back(*r.target);
    }
  }
  write_text(paths.root / "survival_predictions.csv", csv);
  echo_config(paths.root, cfg);
  if (evaluate) {
    require(!preds.empty(), ErrorCode::InsufficientData, "no predicted case has a survival target");
    report.metrics = evaluate_survival(preds, targets, model.config);
    write_json(paths.root / "survival_metrics.json", {{"cases", preds.size()},
                                                      {"mse", report.metrics->mse},
                                                      {"spearman_r", report.metrics->spearman_r},
                                                      {"accuracy", report.metrics->accuracy}});
  }
  return report;
}

void write_overlay_png(const fs::path& path, const Volume<float>& flair, const LabelVolume& truth,
                       const LabelVolume* prediction, Plane plane, int index) {
  const Dims3 d = flair.dims();
  const int axis = plane_axis(plane);
  require(index >= 0 && index < d[axis], ErrorCode::InvalidInput, "overlay slice index out of range");
  const auto [h, w] = slice_dims(d, plane);
  auto voxel = [&, axis](int r, int c) -> std::array<int, 3> {
    if (axis == 0) return {index, r, c};
    if (axis == 1) return {r, index, c};
    return {r, c, index};
  };

  std::vector<double> gray;
  gray.reserve(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const auto [x, y, z] = voxel(r, c);
      gray.push_back(flair.at(x, y, z));
    }
  const double lo = percentile(gray, 0.01), hi = percentile(gray, 0.99);
  const double span = hi > lo ? hi - lo : 1.0;

  static constexpr std::array<std::array<int, 3>, 4> kColours{{{0, 0, 0}, {220, 40, 40}, {40, 200, 60}, {250, 220, 30}}};
  const int panels = prediction ? 2 : 1;
  const int width = w * panels;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * width * 3);
  for (int panel = 0; panel < panels; ++panel) {
    const LabelVolume& labels = panel == 0 ? truth : *prediction;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const auto [x, y, z] = voxel(r, c);
        const double g = std::clamp((gray[static_cast<std::size_t>(r) * w + c] - lo) / span, 0.0, 1.0) * 255.0;
        const int label = std::min<int>(labels.voxels.at(x, y, z), 3);
        std::uint8_t* px = &rgb[(static_cast<std::size_t>(r) * width + panel * w + c) * 3];
        for (int ch = 0; ch < 3; ++ch) {
          const double v = label == 0 ? g : 0.5 * g + 0.5 * kColours[static_cast<std::size_t>(label)][static_cast<std::size_t>(ch)];
          px[ch] = static_cast<std::uint8_t>(std::lround(v));
        }
      }
  }

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  const int ok = png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr);
  const std::string message = image.message;
  png_image_free(&image);
  require(ok != 0, ErrorCode::IoError, "cannot write " + path.string() + ": " + message);
}

}  // namespace triseg
