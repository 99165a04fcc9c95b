#include "runner.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

#include "json.hpp"
#include "svg.hpp"

namespace ckfr {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) fail_config(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key)) fail_config(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    fail_config("config: bad value for '" + key + "'");
  }
}

SynthConfig parse_synth(const json& j) {
  check_keys(j,
             {"branching", "depth", "images_per_class", "image_size", "confound_prob",
              "object_scale_min", "object_scale_max", "val_fraction", "seed"},
             "config.dataset.synth");
  SynthConfig s;
  s.branching = get_or(j, "branching", s.branching);
  s.depth = get_or(j, "depth", s.depth);
  s.images_per_class = get_or(j, "images_per_class", s.images_per_class);
  s.image_size = get_or(j, "image_size", s.image_size);
  s.confound_prob = get_or(j, "confound_prob", s.confound_prob);
  s.object_scale_min = get_or(j, "object_scale_min", s.object_scale_min);
  s.object_scale_max = get_or(j, "object_scale_max", s.object_scale_max);
  s.val_fraction = get_or(j, "val_fraction", s.val_fraction);
  s.seed = get_or(j, "seed", s.seed);
  try {
    s.validate();
  } catch (const Error& e) {
    fail_config(std::string("config.dataset.synth: ") + e.what());
  }
  return s;
}

json synth_to_json(const SynthConfig& s) {
  json j;
  j["branching"] = s.branching;
  j["depth"] = s.depth;
  j["images_per_class"] = s.images_per_class;
  j["image_size"] = s.image_size;
  j["confound_prob"] = s.confound_prob;
  j["object_scale_min"] = s.object_scale_min;
  j["object_scale_max"] = s.object_scale_max;
  j["val_fraction"] = s.val_fraction;
  j["seed"] = s.seed;
  return j;
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail_config(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(j, {"dataset", "backbone", "train", "loss", "eval", "out_dir"}, "config");

  RunConfig cfg;
  if (!j.contains("dataset")) fail_config("config: missing 'dataset' section");
  {
    const json& d = j.at("dataset");
    check_keys(d, {"synth", "path"}, "config.dataset");
    const bool has_synth = d.contains("synth");
    const bool has_path = d.contains("path");
    if (has_synth == has_path) {
      fail_config("config.dataset: exactly one of 'synth' or 'path' is required");
    }
    if (has_synth) {
      cfg.synth = parse_synth(d.at("synth"));
    } else {
      cfg.dataset_path = d.at("path").get<std::string>();
    }
  }

  if (j.contains("backbone")) {
    const json& b = j.at("backbone");
    check_keys(b,
               {"in_channels", "height", "width", "conv_channels", "latent_dim", "num_classes",
                "dropout", "latent3_viz"},
               "config.backbone");
    cfg.backbone.conv_channels = get_or(b, "conv_channels", std::vector<int>{8, 16});
    cfg.backbone.latent_dim = get_or(b, "latent_dim", 32);
    cfg.backbone.dropout = get_or(b, "dropout", 0.0);
    cfg.backbone.latent3_viz = get_or(b, "latent3_viz", false);
    if (b.contains("in_channels") || b.contains("height") || b.contains("width") ||
        b.contains("num_classes")) {
      cfg.backbone_shape_given = true;
      cfg.backbone.in_channels = get_or(b, "in_channels", 3);
      cfg.backbone.height = get_or(b, "height", 32);
      cfg.backbone.width = get_or(b, "width", 32);
      cfg.backbone.num_classes = get_or(b, "num_classes", 2);
    }
  } else {
    cfg.backbone.conv_channels = {8, 16};
    cfg.backbone.latent_dim = 32;
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t,
               {"epochs", "batch_size", "lr_initial", "lr_final", "seed", "eval_batch",
                "optimizer", "augment"},
               "config.train");
    cfg.train.epochs = get_or(t, "epochs", cfg.train.epochs);
    cfg.train.batch_size = get_or(t, "batch_size", cfg.train.batch_size);
    cfg.train.lr_initial = get_or(t, "lr_initial", cfg.train.lr_initial);
    cfg.train.lr_final = get_or(t, "lr_final", cfg.train.lr_final);
    cfg.train.seed = get_or(t, "seed", cfg.train.seed);
    cfg.train.eval_batch = get_or(t, "eval_batch", cfg.train.eval_batch);
    if (t.contains("optimizer")) {
      const json& o = t.at("optimizer");
      check_keys(o, {"kind", "beta1", "beta2", "eps", "sam", "sam_rho"}, "config.train.optimizer");
      cfg.train.optim.kind = optim_kind_from_string(get_or<std::string>(o, "kind", "adam"));
      cfg.train.optim.beta1 = get_or(o, "beta1", cfg.train.optim.beta1);
      cfg.train.optim.beta2 = get_or(o, "beta2", cfg.train.optim.beta2);
      cfg.train.optim.eps = get_or(o, "eps", cfg.train.optim.eps);
      cfg.train.optim.sam = get_or(o, "sam", cfg.train.optim.sam);
      cfg.train.optim.sam_rho = get_or(o, "sam_rho", cfg.train.optim.sam_rho);
    }
    if (t.contains("augment")) {
      const json& a = t.at("augment");
      check_keys(a,
                 {"crop", "crop_scale_min", "crop_scale_max", "flip", "flip_prob", "rotate",
                  "rotate_max_deg", "blur", "blur_prob", "blur_sigma"},
                 "config.train.augment");
      AugmentConfig& ag = cfg.train.augment;
      ag.crop = get_or(a, "crop", ag.crop);
      ag.crop_scale_min = get_or(a, "crop_scale_min", ag.crop_scale_min);
      ag.crop_scale_max = get_or(a, "crop_scale_max", ag.crop_scale_max);
      ag.flip = get_or(a, "flip", ag.flip);
      ag.flip_prob = get_or(a, "flip_prob", ag.flip_prob);
      ag.rotate = get_or(a, "rotate", ag.rotate);
      ag.rotate_max_deg = get_or(a, "rotate_max_deg", ag.rotate_max_deg);
      ag.blur = get_or(a, "blur", ag.blur);
      ag.blur_prob = get_or(a, "blur_prob", ag.blur_prob);
      ag.blur_sigma = get_or(a, "blur_sigma", ag.blur_sigma);
    }
  }

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    check_keys(l, {"alpha", "ell", "symmetrized"}, "config.loss");
    cfg.train.loss.alpha = get_or(l, "alpha", cfg.train.loss.alpha);
    cfg.train.loss.ell = get_or(l, "ell", cfg.train.loss.ell);
    cfg.train.loss.symmetrized = get_or(l, "symmetrized", cfg.train.loss.symmetrized);
    try {
      cfg.train.loss.validate();
    } catch (const Error& e) {
      fail_config(std::string("config.loss: ") + e.what());
    }
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"preset", "tau_g1", "tau_g2", "delta", "overlap_keep"}, "config.eval");
    if (e.contains("preset")) cfg.eval = EvalConfig::preset(e.at("preset").get<std::string>());
    cfg.eval.tau_g1 = get_or(e, "tau_g1", cfg.eval.tau_g1);
    cfg.eval.tau_g2 = get_or(e, "tau_g2", cfg.eval.tau_g2);
    cfg.eval.delta = get_or(e, "delta", cfg.eval.delta);
    cfg.eval.overlap_keep = get_or(e, "overlap_keep", cfg.eval.overlap_keep);
    try {
      cfg.eval.validate();
    } catch (const Error& err) {
      fail_config(std::string("config.eval: ") + err.what());
    }
  }

  cfg.out_dir = get_or<std::string>(j, "out_dir", cfg.out_dir);
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  return from_json_text(read_text_file(path));
}

std::string RunConfig::to_json_text() const {
  json j;
  if (synth) {
    j["dataset"]["synth"] = synth_to_json(*synth);
  } else {
    j["dataset"]["path"] = dataset_path;
  }
  json b;
  b["in_channels"] = backbone.in_channels;
  b["height"] = backbone.height;
  b["width"] = backbone.width;
  b["conv_channels"] = backbone.conv_channels;
  b["latent_dim"] = backbone.latent_dim;
  b["num_classes"] = backbone.num_classes;
  b["dropout"] = backbone.dropout;
  b["latent3_viz"] = backbone.latent3_viz;
  j["backbone"] = std::move(b);
  json t;
  t["epochs"] = train.epochs;
  t["batch_size"] = train.batch_size;
  t["lr_initial"] = train.lr_initial;
  t["lr_final"] = train.lr_final;
  t["seed"] = train.seed;
  t["eval_batch"] = train.eval_batch;
  t["optimizer"] = {{"kind", optim_kind_to_string(train.optim.kind)},
                    {"beta1", train.optim.beta1},
                    {"beta2", train.optim.beta2},
                    {"eps", train.optim.eps},
                    {"sam", train.optim.sam},
                    {"sam_rho", train.optim.sam_rho}};
  t["augment"] = {{"crop", train.augment.crop},
                  {"crop_scale_min", train.augment.crop_scale_min},
                  {"crop_scale_max", train.augment.crop_scale_max},
                  {"flip", train.augment.flip},
                  {"flip_prob", train.augment.flip_prob},
                  {"rotate", train.augment.rotate},
                  {"rotate_max_deg", train.augment.rotate_max_deg},
                  {"blur", train.augment.blur},
                  {"blur_prob", train.augment.blur_prob},
                  {"blur_sigma", train.augment.blur_sigma}};
  j["train"] = std::move(t);
  j["loss"] = {{"alpha", train.loss.alpha},
               {"ell", train.loss.ell},
               {"symmetrized", train.loss.symmetrized}};
  j["eval"] = {{"tau_g1", eval.tau_g1},
               {"tau_g2", eval.tau_g2},
               {"delta", eval.delta},
               {"overlap_keep", eval.overlap_keep}};
  j["out_dir"] = out_dir;
  return j.dump(2) + "\n";
}

ExperimentData load_experiment_data(const RunConfig& cfg) {
  ExperimentData data;
  if (cfg.synth) {
    SynthResult r = generate_tree_blobs(*cfg.synth);
    data.train = std::move(r.train);
    data.val = std::move(r.val);
    data.tree = std::move(r.tree);
    data.mapping = std::move(r.mapping);
    return data;
  }
  const std::string root = cfg.dataset_path;
  data.train = load_dataset(root + "/train");
  data.val = load_dataset(root + "/val");
  data.tree = KnowledgeTree::parse_file(root + "/tree.txt");
  data.mapping = ClassMapping::parse_file(root + "/mapping.tsv");
  return data;
}

void resolve_backbone(RunConfig& cfg, const Dataset& ds) {
  if (!cfg.backbone_shape_given) {
    cfg.backbone.in_channels = ds.channels;
    cfg.backbone.height = ds.height;
    cfg.backbone.width = ds.width;
    cfg.backbone.num_classes = static_cast<int>(ds.class_names.size());
    cfg.backbone_shape_given = true;
  }
  if (cfg.backbone.num_classes != static_cast<int>(ds.class_names.size())) {
    fail_config("config.backbone: num_classes does not match the dataset");
  }
  cfg.backbone.validate();
}

namespace {

void write_resolved_config(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  RunConfig resolved = cfg;
  resolved.out_dir = out_dir;
  write_text_file(out_dir + "/resolved-config.json", resolved.to_json_text());
}

std::string fmt4(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

void run_gen(const RunConfig& cfg, const std::string& out_dir) {
  if (!cfg.synth) fail_config("gen: config must carry a dataset.synth section");
  SynthResult r = generate_tree_blobs(*cfg.synth);
  fs::create_directories(out_dir);
  save_dataset(r.train, out_dir + "/train");
  save_dataset(r.val, out_dir + "/val");
  write_text_file(out_dir + "/tree.txt", r.tree_text);
  write_text_file(out_dir + "/mapping.tsv", r.mapping_text);
  write_resolved_config(cfg, out_dir);
}

void run_distances(const std::string& tree_path, const std::string& classes_path,
                   double default_weight, const std::string& out_csv) {
  const KnowledgeTree tree = KnowledgeTree::parse_file(tree_path, default_weight);
  const ClassMapping mapping = ClassMapping::parse_file(classes_path);
  const DistanceMatrix matrix = build_prior_matrix(tree, mapping, mapping.dataset_classes);
  matrix.save_csv(out_csv);
}

void run_train(const RunConfig& cfg_in, const std::string& out_dir) {
  RunConfig cfg = cfg_in;
  ExperimentData data = load_experiment_data(cfg);
  resolve_backbone(cfg, data.train);
  write_resolved_config(cfg, out_dir);
  TrainResult result = train(cfg.train, cfg.backbone, data.train, data.val, data.tree, data.mapping);
  save_checkpoint(result.model, out_dir + "/checkpoint.ckpt");
  write_text_file(out_dir + "/history.csv", result.history.to_csv());
}

EvalRow evaluate_checkpoint(const RunConfig& cfg, const Model& model, const ExperimentData& data) {
  const Dataset& val = data.val;
  EvalRow row;
  const EvalOutputs ev = evaluate_classifier(model, val, cfg.train.eval_batch);
  row.top1 = ev.top1;
  row.top5 = ev.top5;

  const DistanceMatrix prior = build_prior_matrix(data.tree, data.mapping, val.class_names);
  row.align_pearson = alignment_on_dataset(ev.latents, val.labels, val.class_names, prior,
                                           cfg.train.loss.ell).pearson;

  if (!val.boxes.empty()) {
    std::vector<ActivationMap> maps;
    maps.reserve(static_cast<size_t>(val.count()));
    std::vector<std::vector<Box>> gt;
    gt.reserve(static_cast<size_t>(val.count()));
    double mass = 0.0;
    for (int64_t i = 0; i < val.count(); ++i) {
      maps.push_back(compute_activation_map(model, val.image(i), val.labels[static_cast<size_t>(i)],
                                            CamMethod::kCam));
      gt.push_back({val.boxes[static_cast<size_t>(i)]});
      mass += activation_mass_outside(maps.back(), val.boxes[static_cast<size_t>(i)]);
    }
    row.mass_outside = mass / static_cast<double>(val.count());
    row.single = localization_metrics(ev.ranked, val.labels, maps, gt, cfg.eval,
                                      BoxProtocol::kSingleThreshold);
    row.dual = localization_metrics(ev.ranked, val.labels, maps, gt, cfg.eval,
                                    BoxProtocol::kDualThreshold);
  }
  return row;
}

namespace {

std::string eval_csv_header() {
  return "top1_acc,top5_acc,gt_loc_single,top1_loc_single,top5_loc_single,"
         "gt_loc_dual,top1_loc_dual,top5_loc_dual,align_pearson,mass_outside\n";
}

std::string eval_csv_row(const EvalRow& r) {
  std::ostringstream os;
  os << fmt4(r.top1) << "," << fmt4(r.top5) << "," << fmt4(r.single.gt_loc) << ","
     << fmt4(r.single.top1_loc) << "," << fmt4(r.single.top5_loc) << "," << fmt4(r.dual.gt_loc)
     << "," << fmt4(r.dual.top1_loc) << "," << fmt4(r.dual.top5_loc) << ","
     << fmt4(r.align_pearson) << "," << fmt4(r.mass_outside) << "\n";
  return os.str();
}

}  // namespace

void run_eval(const RunConfig& cfg_in, const std::string& checkpoint, const std::string& out_dir) {
  RunConfig cfg = cfg_in;
  ExperimentData data = load_experiment_data(cfg);
  const Model model = load_checkpoint(checkpoint);
  resolve_backbone(cfg, data.train);
  write_resolved_config(cfg, out_dir);
  const EvalRow row = evaluate_checkpoint(cfg, model, data);
  write_text_file(out_dir + "/metrics.csv", eval_csv_header() + eval_csv_row(row));
}

void run_cam(const RunConfig& cfg_in, const std::string& checkpoint, const std::string& out_dir,
             int max_images, const std::string& method) {
  if (max_images < 1) fail_config("cam: count must be >= 1");
  CamMethod cam_method;
  if (method == "cam") {
    cam_method = CamMethod::kCam;
  } else if (method == "gradcam") {
    cam_method = CamMethod::kGradCam;
  } else {
    fail_config("cam: method must be cam or gradcam");
  }
  RunConfig cfg = cfg_in;
  ExperimentData data = load_experiment_data(cfg);
  const Model model = load_checkpoint(checkpoint);
  resolve_backbone(cfg, data.train);
  write_resolved_config(cfg, out_dir);

  const Dataset& val = data.val;
  const int64_t n = std::min<int64_t>(max_images, val.count());
  for (int64_t i = 0; i < n; ++i) {
    const int label = val.labels[static_cast<size_t>(i)];
    const ActivationMap map = compute_activation_map(model, val.image(i), label, cam_method);
    std::ostringstream csv;
    char buf[48];
    for (int y = 0; y < map.height; ++y) {
      for (int x = 0; x < map.width; ++x) {
        std::snprintf(buf, sizeof(buf), "%.9g", map.at(y, x));
        csv << (x ? "," : "") << buf;
      }
      csv << "\n";
    }
    const std::string stem = out_dir + "/map_" + std::to_string(i);
    write_text_file(stem + ".csv", csv.str());
    const auto candidates = candidate_boxes(map, cfg.eval, BoxProtocol::kDualThreshold);
    std::vector<Box> gt;
    if (!val.boxes.empty()) gt.push_back(val.boxes[static_cast<size_t>(i)]);
    write_text_file(stem + ".svg",
                    svg_map_overlay(map.values, map.height, map.width, candidates, gt,
                                    "image " + std::to_string(i) + " class " +
                                        val.class_names[static_cast<size_t>(label)] + " (" +
                                        map.method + ")"));
  }
}

void run_sweep(const RunConfig& cfg_in, const std::string& param, const std::vector<double>& values,
               const std::string& out_dir) {
  if (param != "alpha" && param != "ell") fail_config("sweep: param must be alpha or ell");
  if (values.empty()) fail_config("sweep: empty value list");
  RunConfig cfg = cfg_in;
  ExperimentData data = load_experiment_data(cfg);
  resolve_backbone(cfg, data.train);
  write_resolved_config(cfg, out_dir);

  std::ostringstream csv;
  csv << "param,value," << eval_csv_header().substr(0, eval_csv_header().size() - 1) << "\n";
  std::vector<double> xs, top1s;
  for (double v : values) {
    RunConfig run = cfg;
    if (param == "alpha") {
      run.train.loss.alpha = v;
    } else {
      run.train.loss.ell = v;
    }
    run.train.loss.validate();
    TrainResult result = train(run.train, run.backbone, data.train, data.val, data.tree, data.mapping);
    const EvalRow row = evaluate_checkpoint(run, result.model, data);
    char head[64];
    std::snprintf(head, sizeof(head), "%s,%.9g,", param.c_str(), v);
    std::string r = eval_csv_row(row);
    csv << head << r;
    xs.push_back(v);
    top1s.push_back(row.top1);
  }
  write_text_file(out_dir + "/sweep.csv", csv.str());

  SvgSeries series;
  series.label = "val top-1 acc";
  series.x = xs;
  series.y = top1s;
  write_text_file(out_dir + "/sweep.svg",
                  svg_line_plot({series}, "sweep over " + param, param, "val top-1 acc (%)"));
}

void run_latent3d(const RunConfig& cfg_in, const std::string& checkpoint,
                  const std::string& out_dir) {
  RunConfig cfg = cfg_in;
  ExperimentData data = load_experiment_data(cfg);
  const Model model = load_checkpoint(checkpoint);
  resolve_backbone(cfg, data.train);
  write_resolved_config(cfg, out_dir);
  export_latent3d(model, data.val, out_dir + "/latent3d.csv");
}

void run_report(const std::string& sweep_csv, const std::string& x_column,
                const std::string& y_column, const std::string& out_svg) {
  std::istringstream in(read_text_file(sweep_csv));
  std::string line;
  if (!std::getline(in, line)) fail_config("report: empty csv");
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      header.push_back(cell);
    }
  }
  int xi = -1, yi = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == x_column) xi = static_cast<int>(i);
    if (header[i] == y_column) yi = static_cast<int>(i);
  }
  if (xi < 0) fail_config("report: column '" + x_column + "' not found");
  if (yi < 0) fail_config("report: column '" + y_column + "' not found");

  SvgSeries series;
  series.label = y_column;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (static_cast<int>(cells.size()) <= std::max(xi, yi)) fail_config("report: short row");
    try {
      series.x.push_back(std::stod(cells[static_cast<size_t>(xi)]));
      series.y.push_back(std::stod(cells[static_cast<size_t>(yi)]));
    } catch (const std::exception&) {
      fail_config("report: non-numeric cell in column " + x_column + "/" + y_column);
    }
  }
  if (series.x.empty()) fail_config("report: no data rows");
  write_text_file(out_svg, svg_line_plot({series}, y_column + " vs " + x_column, x_column, y_column));
}

}  // namespace ckfr
