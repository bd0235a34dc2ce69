// hsical: hyperspectral radiometric calibration toolkit.
//
// Verbs map onto the processing pipeline: calibrate / grayworld / expand /
// resample for cube math, metrics for evaluation, synth / train / eval for
// the learning workflow, gradcheck for the autodiff self-test. Every verb
// exits 0 on success; module errors exit 1 with a one-line JSON object on
// stderr; usage problems exit 2.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "hsical/gradcheck.hpp"
#include "hsical/grayworld.hpp"
#include "hsical/hypercube.hpp"
#include "hsical/metrics.hpp"
#include "hsical/radiometry.hpp"
#include "hsical/report_json.hpp"
#include "hsical/sitnet.hpp"
#include "hsical/synth.hpp"
#include "hsical/trainer.hpp"

namespace fs = std::filesystem;
using namespace hsical;
using ordered_json = nlohmann::ordered_json;

namespace {

void emit_json(const ordered_json& j, const std::string& path) {
  if (path.empty()) return;
  const std::string text = j.dump(2) + "\n";
  if (path == "-") {
    std::cout << text;
  } else {
    std::ofstream out(path);
    require(static_cast<bool>(out), Err::IoFailure, "cannot open " + path);
    out << text;
  }
}

std::vector<BandRange> parse_ranges(const std::string& spec) {
  std::vector<BandRange> out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    std::size_t comma = spec.find(',', pos);
    if (comma == std::string::npos) comma = spec.size();
    const std::string name = spec.substr(pos, comma - pos);
    if (name == "full") out.push_back(BandRange::full());
    else if (name == "vis") out.push_back(BandRange::vis());
    else if (name == "nir") out.push_back(BandRange::nir());
    else if (!name.empty()) fail(Err::UsageError, "unknown range '" + name + "'");
    pos = comma + 1;
  }
  require(!out.empty(), Err::UsageError, "no ranges given");
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Err::IoFailure, "cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

// Pair manifest: one "scene_index,illum_label,uncal_file,gt_file" row per pair.
constexpr const char* kManifestName = "pairs.csv";

void write_manifest(const std::vector<SynthPair>& pairs, const fs::path& dir) {
  std::ostringstream os;
  os << "scene_index,illum_label,uncal,gt\n";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    char uncal[64], gt[64];
    std::snprintf(uncal, sizeof(uncal), "scene%03zu_%s.uncal.hsc", pairs[i].scene_index,
                  pairs[i].illum_label.c_str());
    std::snprintf(gt, sizeof(gt), "scene%03zu_%s.gt.hsc", pairs[i].scene_index,
                  pairs[i].illum_label.c_str());
    save_cube(pairs[i].uncalibrated, (dir / uncal).string());
    save_cube(pairs[i].gt, (dir / gt).string());
    os << pairs[i].scene_index << "," << pairs[i].illum_label << "," << uncal << ","
       << gt << "\n";
  }
  const std::string text = os.str();
  io::write_file((dir / kManifestName).string(),
                 std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<SynthPair> load_manifest(const fs::path& dir) {
  std::ifstream in(dir / kManifestName);
  require(static_cast<bool>(in), Err::IoFailure,
          "no " + std::string(kManifestName) + " in " + dir.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<SynthPair> pairs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (true) {
      std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) {
        cols.push_back(line.substr(pos));
        break;
      }
      cols.push_back(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    require(cols.size() == 4, Err::TruncatedPayload, "malformed manifest row: " + line);
    SynthPair p;
    p.scene_index = std::stoul(cols[0]);
    p.illum_label = cols[1];
    p.uncalibrated = load_cube((dir / cols[2]).string());
    p.gt = load_cube((dir / cols[3]).string());
    pairs.push_back(std::move(p));
  }
  require(!pairs.empty(), Err::TruncatedPayload, "manifest has no pairs");
  return pairs;
}

int run(int argc, char** argv) {
  CLI::App app{"hsical: hyperspectral radiometric calibration toolkit"};
  app.require_subcommand(1);

  // ---- calibrate ----
  std::string cal_in, cal_illum, cal_out, cal_json;
  double cal_l = 1.0;
  auto* cal = app.add_subcommand("calibrate", "divide a radiance cube by an illumination curve");
  cal->add_option("--in", cal_in, "input cube (.hsc)")->required();
  cal->add_option("--illum", cal_illum, "illumination curve CSV")->required();
  cal->add_option("--out", cal_out, "output reflectance cube")->required();
  cal->add_option("--l", cal_l, "ideal-white constant (default 1)");
  cal->add_option("--json", cal_json, "write a JSON summary ('-' for stdout)");

  // ---- grayworld ----
  std::string gw_in, gw_out, gw_dump, gw_json;
  double gw_target = kGrayWorldTarget;
  auto* gw = app.add_subcommand("grayworld", "gray-world baseline calibration");
  gw->add_option("--in", gw_in, "input cube")->required();
  gw->add_option("--out", gw_out, "output cube")->required();
  gw->add_option("--target-mean", gw_target,
                 "target band mean (0 = mean of band means)");
  gw->add_option("--dump-illum", gw_dump, "also write the estimated curve CSV");
  gw->add_option("--json", gw_json, "write a JSON summary");

  // ---- expand ----
  std::string ex_refl, ex_illums, ex_out, ex_json;
  auto* ex = app.add_subcommand("expand", "composite a reflectance cube with each illumination");
  ex->add_option("--reflectance", ex_refl, "ground-truth reflectance cube")->required();
  ex->add_option("--illums", ex_illums, "directory of illumination CSVs")->required();
  ex->add_option("--out", ex_out, "output directory")->required();
  ex->add_option("--json", ex_json, "write a JSON summary");

  // ---- resample ----
  std::string rs_in, rs_out, rs_json;
  auto* rs = app.add_subcommand("resample", "resample to the 31-channel 400-700nm grid");
  rs->add_option("--in", rs_in, "input cube")->required();
  rs->add_option("--out", rs_out, "output cube")->required();
  rs->add_option("--json", rs_json, "write a JSON summary");

  // ---- metrics ----
  std::string mt_gt, mt_est, mt_ranges = "full", mt_json;
  bool mt_aligned = false;
  auto* mt = app.add_subcommand("metrics", "PSNR/RMSE/ERGAS/SAM between two cubes");
  mt->add_option("--gt", mt_gt, "ground-truth cube")->required();
  mt->add_option("--est", mt_est, "estimate cube")->required();
  mt->add_option("--ranges", mt_ranges, "comma list of full,vis,nir");
  mt->add_flag("--aligned", mt_aligned, "also report best-global-scale metrics");
  mt->add_option("--json", mt_json, "write the report array ('-' for stdout)");

  // ---- synth ----
  std::string sy_out, sy_json;
  SynthConfig sy_cfg;
  auto* sy = app.add_subcommand("synth", "generate a synthetic paired dataset");
  sy->add_option("--out", sy_out, "output directory")->required();
  sy->add_option("--scenes", sy_cfg.n_scenes, "number of scenes");
  sy->add_option("--size", sy_cfg.size, "square scene size in pixels");
  sy->add_option("--bands", sy_cfg.bands, "number of bands");
  sy->add_option("--blobs", sy_cfg.n_blobs, "regions per scene");
  sy->add_option("--noise-dark", sy_cfg.noise_dark, "dark-current level (0 = clean)");
  sy->add_option("--seed", sy_cfg.seed, "generator seed");
  sy->add_option("--json", sy_json, "write a JSON summary");

  // ---- train ----
  std::string tr_model_cfg, tr_train_cfg, tr_data, tr_out = "model.hsw", tr_trace, tr_json;
  auto* tr = app.add_subcommand("train", "train the spectral illumination transformer");
  tr->add_option("--model-cfg", tr_model_cfg, "model config file (key=value)");
  tr->add_option("--train-cfg", tr_train_cfg, "training config file (key=value)");
  tr->add_option("--data", tr_data, "dataset directory with pairs.csv")->required();
  tr->add_option("--out", tr_out, "checkpoint path");
  tr->add_option("--trace", tr_trace, "loss trace CSV path");
  tr->add_option("--json", tr_json, "write a JSON summary");

  // ---- eval ----
  std::string ev_ckpt, ev_data, ev_json, ev_ranges = "full", ev_baseline = "grayworld";
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint over a dataset");
  ev->add_option("--ckpt", ev_ckpt, "checkpoint (.hsw)")->required();
  ev->add_option("--data", ev_data, "dataset directory with pairs.csv")->required();
  ev->add_option("--ranges", ev_ranges, "comma list of full,vis,nir");
  ev->add_option("--baseline", ev_baseline, "comparison rows: grayworld|none");
  ev->add_option("--json", ev_json, "write the table as JSON ('-' for stdout)");

  // ---- gradcheck ----
  std::string gc_json;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every primitive");
  gc->add_option("--json", gc_json, "write results as JSON ('-' for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  if (cal->parsed()) {
    HyperCube cube = load_cube(cal_in);
    IlluminationCurve curve = load_curve(cal_illum);
    HyperCube out = calibrate(cube, curve, static_cast<float>(cal_l));
    save_cube(out, cal_out);
    ordered_json j;
    j["out"] = cal_out;
    j["bands"] = out.bands;
    j["kind"] = kind_name(out.kind);
    emit_json(j, cal_json);
  } else if (gw->parsed()) {
    HyperCube cube = load_cube(gw_in);
    IlluminationCurve est = grayworld_estimate(cube, gw_target);
    HyperCube out = calibrate(cube, est);
    save_cube(out, gw_out);
    if (!gw_dump.empty()) save_curve(est, gw_dump);
    ordered_json j;
    j["out"] = gw_out;
    j["label"] = est.label;
    emit_json(j, gw_json);
  } else if (ex->parsed()) {
    HyperCube refl = load_cube(ex_refl);
    require(refl.kind == CubeKind::Reflectance, Err::DimMismatch,
            "expand needs a reflectance cube");
    fs::create_directories(ex_out);
    std::vector<fs::path> csvs;
    for (const auto& entry : fs::directory_iterator(ex_illums))
      if (entry.path().extension() == ".csv") csvs.push_back(entry.path());
    std::sort(csvs.begin(), csvs.end());
    require(!csvs.empty(), Err::EmptySelection, "no .csv curves in " + ex_illums);
    ordered_json outs = ordered_json::array();
    for (const auto& p : csvs) {
      IlluminationCurve curve = load_curve(p.string());
      HyperCube cube = composite(refl, curve);
      const fs::path out_path = fs::path(ex_out) / (p.stem().string() + ".hsc");
      save_cube(cube, out_path.string());
      outs.push_back(out_path.string());
    }
    ordered_json j;
    j["count"] = outs.size();
    j["outputs"] = outs;
    emit_json(j, ex_json);
  } else if (rs->parsed()) {
    HyperCube out = resample_to_31(load_cube(rs_in));
    save_cube(out, rs_out);
    ordered_json j;
    j["out"] = rs_out;
    j["bands"] = out.bands;
    emit_json(j, rs_json);
  } else if (mt->parsed()) {
    HyperCube gt = load_cube(mt_gt);
    HyperCube est = load_cube(mt_est);
    auto reports = evaluate(gt, est, parse_ranges(mt_ranges), mt_aligned);
    for (const auto& r : reports) {
      std::printf("%-5s%s  PSNR %7.3f dB  SAM %8.4f deg  RMSE %7.4f %%  ERGAS %7.4f %%%s\n",
                  r.range.name.c_str(), r.scale_aligned ? "*" : " ", r.psnr_db, r.sam_deg,
                  r.rmse_pct, r.ergas_pct, r.exact_match ? "  [exact match]" : "");
    }
    emit_json(to_json(reports), mt_json);
  } else if (sy->parsed()) {
    fs::create_directories(sy_out);
    auto pairs = synth_dataset(sy_cfg);
    write_manifest(pairs, sy_out);
    ordered_json j;
    j["pairs"] = pairs.size();
    j["dir"] = sy_out;
    emit_json(j, sy_json);
    std::cout << "wrote " << pairs.size() << " pairs to " << sy_out << "\n";
  } else if (tr->parsed()) {
    sit::SitConfig mcfg;
    if (!tr_model_cfg.empty()) mcfg = sit::SitConfig::from_text(read_text_file(tr_model_cfg));
    TrainConfig tcfg;
    if (!tr_train_cfg.empty()) tcfg = TrainConfig::from_text(read_text_file(tr_train_cfg));
    auto pairs = load_manifest(tr_data);
    mcfg.in_bands = pairs.front().uncalibrated.bands;
    SplitDataset split = split_dataset(pairs, tcfg.split_train, tcfg.split_val, tcfg.seed);
    const auto& train_set = split.train.empty() ? pairs : split.train;
    TrainResult res = train(mcfg, tcfg, train_set, split.val);
    sit::save_weights(res.weights, mcfg, tr_out);
    if (!tr_trace.empty()) save_trace_csv(res.trace, tr_trace);
    ordered_json j;
    j["checkpoint"] = tr_out;
    j["steps"] = res.steps_run;
    j["initial_l1"] = res.initial_eval;
    j["best_l1"] = res.best_eval;
    emit_json(j, tr_json);
    std::cout << "trained " << res.steps_run << " steps; val L1 " << res.initial_eval
              << " -> " << res.best_eval << "; saved " << tr_out << "\n";
  } else if (ev->parsed()) {
    sit::LoadedModel model = sit::load_weights(ev_ckpt);
    auto pairs = load_manifest(ev_data);
    const auto ranges = parse_ranges(ev_ranges);
    Calibrator net = [&](const HyperCube& cube) {
      return sit_predict(model.weights, model.config, cube);
    };
    EvalTable table = evaluate_model(net, pairs, ranges);
    ordered_json j;
    j["model"] = to_json(table);
    std::cout << "== model ==\n" << format_table(table);
    if (ev_baseline == "grayworld") {
      Calibrator gwc = [](const HyperCube& cube) { return grayworld_calibrate(cube); };
      EvalTable base = evaluate_model(gwc, pairs, ranges);
      j["grayworld"] = to_json(base);
      std::cout << "== grayworld ==\n" << format_table(base);
    }
    emit_json(j, ev_json);
  } else if (gc->parsed()) {
    auto results = tk::run_gradcheck_suite();
    bool all_pass = true;
    ordered_json arr = ordered_json::array();
    for (const auto& r : results) {
      std::printf("%-18s max rel err %.3e  %s\n", r.name.c_str(), r.max_rel_err,
                  r.pass ? "pass" : "FAIL");
      ordered_json j;
      j["name"] = r.name;
      j["max_rel_err"] = r.max_rel_err;
      j["pass"] = r.pass;
      arr.push_back(j);
      all_pass = all_pass && r.pass;
    }
    emit_json(arr, gc_json);
    if (!all_pass) return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    nlohmann::ordered_json j;
    j["error"] = err_name(e.code());
    j["message"] = e.what();
    std::cerr << j.dump() << "\n";
    return e.code() == Err::UsageError ? 2 : 1;
  } catch (const std::exception& e) {
    nlohmann::ordered_json j;
    j["error"] = "Unhandled";
    j["message"] = e.what();
    std::cerr << j.dump() << "\n";
    return 1;
  }
}
