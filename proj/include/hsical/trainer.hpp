#ifndef HSICAL_TRAINER_HPP_
#define HSICAL_TRAINER_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hsical/adam.hpp"
#include "hsical/common.hpp"
#include "hsical/hypercube.hpp"
#include "hsical/metrics.hpp"
#include "hsical/sitnet.hpp"
#include "hsical/synth.hpp"

namespace hsical {

struct TrainConfig {
  std::size_t crop = 64;
  std::size_t batch = 2;
  std::size_t epochs = 50;      // passes over the training pairs
  std::size_t max_steps = 2000; // hard cap on optimizer steps
  double lr = 1e-4;             // Adam, constant
  double split_train = 0.7;
  double split_val = 0.15;      // test split takes the remainder
  std::uint64_t seed = 123;
  std::size_t eval_every = 25;
  // Early stop once validation L1 falls below target_ratio * initial; 0 = off.
  double target_ratio = 0.0;

  std::string to_text() const {
    std::ostringstream os;
    os << "crop=" << crop << "\nbatch=" << batch << "\nepochs=" << epochs
       << "\nmax_steps=" << max_steps << "\nlr=" << lr << "\nsplit_train=" << split_train
       << "\nsplit_val=" << split_val << "\nseed=" << seed << "\neval_every=" << eval_every
       << "\ntarget_ratio=" << target_ratio << "\n";
    return os.str();
  }

  static TrainConfig from_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      const std::size_t eq = line.find('=');
      require(eq != std::string::npos, Err::BadConfig, "expected key=value, got: " + line);
      const std::string key = line.substr(0, eq);
      const std::string val = line.substr(eq + 1);
      if (key == "crop") cfg.crop = std::stoul(val);
      else if (key == "batch") cfg.batch = std::stoul(val);
      else if (key == "epochs") cfg.epochs = std::stoul(val);
      else if (key == "max_steps") cfg.max_steps = std::stoul(val);
      else if (key == "lr") cfg.lr = std::stod(val);
      else if (key == "split_train") cfg.split_train = std::stod(val);
      else if (key == "split_val") cfg.split_val = std::stod(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else if (key == "eval_every") cfg.eval_every = std::stoul(val);
      else if (key == "target_ratio") cfg.target_ratio = std::stod(val);
      else fail(Err::BadConfig, "unknown train config key '" + key + "'");
    }
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// Cube <-> tensor adapters
// ---------------------------------------------------------------------------

inline tk::Tensor<float> tensor_from_cube(const HyperCube& cube) {
  tk::Tensor<float> t;
  t.shape = {cube.bands, cube.height, cube.width};
  t.data = cube.data;  // band-major matches CHW row-major
  return t;
}

inline HyperCube cube_from_tensor(const tk::Tensor<float>& t,
                                  const std::vector<float>& wavelengths, CubeKind kind,
                                  bool clamp_nonneg = true) {
  require(t.ndim() == 3, Err::ShapeMismatch, "cube tensor must be CHW");
  HyperCube cube;
  cube.bands = t.dim(0);
  cube.height = t.dim(1);
  cube.width = t.dim(2);
  cube.wavelengths = wavelengths;
  cube.kind = kind;
  cube.data = t.data;
  if (clamp_nonneg)
    for (float& v : cube.data) v = std::max(v, 0.0f);
  cube.validate_dims();
  return cube;
}

/// Run the network on one cube; the result is clamped to non-negative
/// reflectance.
inline HyperCube sit_predict(sit::SitWeights<float>& w, const sit::SitConfig& cfg,
                             const HyperCube& cube) {
  require(cube.bands == cfg.in_bands, Err::ShapeMismatch,
          "cube bands != model in_bands");
  tk::Tensor<float> in = tensor_from_cube(cube);
  in.shape = {1, cube.bands, cube.height, cube.width};
  tk::Tensor<float> out = sit::run_inference(w, cfg, in);
  out.shape = {cube.bands, cube.height, cube.width};
  return cube_from_tensor(out, cube.wavelengths, CubeKind::Reflectance);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitDataset {
  std::vector<SynthPair> train, val, test;
};

/// Scene-disjoint split: scene indices are shuffled deterministically and
/// partitioned by fraction, so no scene contributes to two splits.
inline SplitDataset split_dataset(const std::vector<SynthPair>& pairs, double train_frac,
                                  double val_frac, std::uint64_t seed) {
  std::vector<std::size_t> scenes;
  for (const auto& p : pairs)
    if (std::find(scenes.begin(), scenes.end(), p.scene_index) == scenes.end())
      scenes.push_back(p.scene_index);
  std::sort(scenes.begin(), scenes.end());
  std::mt19937_64 rng(seed);
  std::shuffle(scenes.begin(), scenes.end(), rng);

  const std::size_t n = scenes.size();
  const std::size_t n_train = static_cast<std::size_t>(std::round(train_frac * n));
  const std::size_t n_val =
      std::min(n - n_train, static_cast<std::size_t>(std::round(val_frac * n)));

  auto bucket_of = [&](std::size_t scene) {
    for (std::size_t i = 0; i < n; ++i)
      if (scenes[i] == scene) return i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
    return 0;
  };
  SplitDataset out;
  for (const auto& p : pairs) {
    switch (bucket_of(p.scene_index)) {
      case 0: out.train.push_back(p); break;
      case 1: out.val.push_back(p); break;
      default: out.test.push_back(p); break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TraceEntry {
  std::size_t step;
  double loss;
};

struct TrainResult {
  sit::SitWeights<float> weights;       // best-validation weights
  sit::SitWeights<float> final_weights; // weights after the last step
  std::vector<TraceEntry> trace;        // per-step batch L1
  double initial_eval = 0.0;            // validation L1 before step 1
  double best_eval = 0.0;
  std::size_t steps_run = 0;
};

/// Mean L1 over full frames of a pair list.
inline double eval_l1(sit::SitWeights<float>& w, const sit::SitConfig& cfg,
                      const std::vector<SynthPair>& pairs) {
  require(!pairs.empty(), Err::BadConfig, "eval_l1 on empty pair list");
  double acc = 0.0;
  for (const auto& p : pairs) {
    tk::Tensor<float> in = tensor_from_cube(p.uncalibrated);
    in.shape = {1, p.uncalibrated.bands, p.uncalibrated.height, p.uncalibrated.width};
    tk::Tensor<float> out = sit::run_inference(w, cfg, in);
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i)
      s += std::abs(static_cast<double>(out[i]) - p.gt.data[i]);
    acc += s / static_cast<double>(out.numel());
  }
  return acc / static_cast<double>(pairs.size());
}

/// L1 + Adam training loop. Fully deterministic for a fixed seed: batch
/// sampling, crop offsets and every reduction are sequential.
inline TrainResult train(const sit::SitConfig& model_cfg, const TrainConfig& tc,
                         const std::vector<SynthPair>& train_pairs,
                         const std::vector<SynthPair>& val_pairs) {
  require(!train_pairs.empty(), Err::BadConfig, "training set is empty");
  const std::vector<SynthPair>& eval_set = val_pairs.empty() ? train_pairs : val_pairs;

  const std::size_t div = std::size_t(1) << model_cfg.ushape_depth;
  require(tc.crop % div == 0, Err::BadConfig, "crop must be divisible by 2^depth");
  const std::size_t frame = train_pairs.front().uncalibrated.height;
  const std::size_t crop = std::min(tc.crop, frame);

  TrainResult res;
  res.weights = sit::init_weights<float>(model_cfg);
  sit::SitWeights<float>& w = res.weights;
  auto params = sit::parameters(w);
  tk::AdamState<float> state;
  tk::AdamOptions<float> opt;
  opt.lr = static_cast<float>(tc.lr);

  std::mt19937_64 rng(tc.seed);

  res.initial_eval = eval_l1(w, model_cfg, eval_set);
  res.best_eval = res.initial_eval;
  sit::SitWeights<float> best = w;

  const std::size_t steps_per_epoch =
      (train_pairs.size() + tc.batch - 1) / tc.batch;
  std::size_t total_steps = tc.epochs * steps_per_epoch;
  if (tc.max_steps > 0) total_steps = std::min(total_steps, tc.max_steps);

  const std::size_t bands = train_pairs.front().uncalibrated.bands;
  for (std::size_t step = 1; step <= total_steps; ++step) {
    // Assemble the batch.
    tk::Tensor<float> in = tk::Tensor<float>::zeros({tc.batch, bands, crop, crop});
    tk::Tensor<float> target = tk::Tensor<float>::zeros({tc.batch, bands, crop, crop});
    for (std::size_t s = 0; s < tc.batch; ++s) {
      const std::size_t pi = rng() % train_pairs.size();
      const SynthPair& pair = train_pairs[pi];
      const std::size_t max_off = pair.uncalibrated.height - crop;
      const std::size_t r0 = max_off ? rng() % (max_off + 1) : 0;
      const std::size_t c0 = max_off ? rng() % (max_off + 1) : 0;
      for (std::size_t b = 0; b < bands; ++b)
        for (std::size_t r = 0; r < crop; ++r)
          for (std::size_t c = 0; c < crop; ++c) {
            const std::size_t dst = ((s * bands + b) * crop + r) * crop + c;
            in[dst] = pair.uncalibrated.at(b, r0 + r, c0 + c);
            target[dst] = pair.gt.at(b, r0 + r, c0 + c);
          }
    }

    tk::Graph<float> g;
    sit::Binding<float> bi(g, w, /*requires_grad=*/true);
    auto input = g.leaf(std::move(in), false);
    auto tgt = g.leaf(std::move(target), false);
    auto pred = sit::sit_forward(g, input, w, bi, model_cfg);
    auto loss = tk::mean_all(g, tk::absval(g, tk::sub(g, pred, tgt)));
    const double loss_v = g.val(loss)[0];
    require(std::isfinite(loss_v), Err::DivergenceDetected,
            "loss is not finite at step " + std::to_string(step));
    g.backward(loss);

    std::vector<tk::Tensor<float>*> pts;
    std::vector<const tk::Tensor<float>*> gts;
    pts.reserve(params.size());
    gts.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      pts.push_back(params[i].tensor);
      gts.push_back(&g.grad(bi.flat()[i]));
    }
    tk::adam_step(pts, gts, state, opt);

    res.trace.push_back({step, loss_v});
    res.steps_run = step;

    if (step % tc.eval_every == 0 || step == total_steps) {
      const double ev = eval_l1(w, model_cfg, eval_set);
      if (ev < res.best_eval) {
        res.best_eval = ev;
        best = w;
      }
      if (tc.target_ratio > 0.0 && ev < tc.target_ratio * res.initial_eval) break;
    }
  }

  res.final_weights = w;
  res.weights = std::move(best);
  return res;
}

inline void save_trace_csv(const std::vector<TraceEntry>& trace, const std::string& path) {
  std::ostringstream os;
  os << "step,loss\n";
  os.precision(10);
  for (const auto& e : trace) os << e.step << "," << e.loss << "\n";
  const std::string s = os.str();
  io::write_file(path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

// ---------------------------------------------------------------------------
// Evaluation tables
// ---------------------------------------------------------------------------

using Calibrator = std::function<HyperCube(const HyperCube&)>;

struct EvalRow {
  std::string illum_label;  // "all" aggregates every pair
  std::string range_name;
  std::size_t n_pairs = 0;
  double psnr_db = 0.0, sam_deg = 0.0, rmse_pct = 0.0, ergas_pct = 0.0;
};

struct EvalTable {
  std::vector<EvalRow> rows;
};

/// Metric means per illumination label and band range, plus "all" rows. Any
/// calibrator (network, Gray-World, identity) goes through the same path.
inline EvalTable evaluate_model(const Calibrator& model, const std::vector<SynthPair>& pairs,
                                const std::vector<BandRange>& ranges) {
  require(!pairs.empty(), Err::BadConfig, "evaluate_model on empty pair list");
  std::vector<std::string> labels;
  for (const auto& p : pairs)
    if (std::find(labels.begin(), labels.end(), p.illum_label) == labels.end())
      labels.push_back(p.illum_label);

  struct Acc {
    double p = 0, s = 0, r = 0, e = 0;
    std::size_t n = 0;
  };
  // label x range accumulation; index 0 is the "all" bucket.
  std::vector<std::vector<Acc>> acc(labels.size() + 1, std::vector<Acc>(ranges.size()));

  for (const auto& pair : pairs) {
    const HyperCube est = model(pair.uncalibrated);
    const std::size_t li =
        1 + static_cast<std::size_t>(std::find(labels.begin(), labels.end(),
                                               pair.illum_label) -
                                     labels.begin());
    for (std::size_t ri = 0; ri < ranges.size(); ++ri) {
      HyperCube g = slice_range(pair.gt, ranges[ri]);
      HyperCube e = slice_range(est, ranges[ri]);
      MetricsReport rep = compute_report(g, e, ranges[ri]);
      for (std::size_t bucket : {std::size_t(0), li}) {
        Acc& a = acc[bucket][ri];
        a.p += rep.psnr_db;
        a.s += rep.sam_deg;
        a.r += rep.rmse_pct;
        a.e += rep.ergas_pct;
        a.n += 1;
      }
    }
  }

  EvalTable table;
  auto emit = [&](const std::string& label, std::size_t bucket) {
    for (std::size_t ri = 0; ri < ranges.size(); ++ri) {
      const Acc& a = acc[bucket][ri];
      if (a.n == 0) continue;
      EvalRow row;
      row.illum_label = label;
      row.range_name = ranges[ri].name;
      row.n_pairs = a.n;
      row.psnr_db = a.p / a.n;
      row.sam_deg = a.s / a.n;
      row.rmse_pct = a.r / a.n;
      row.ergas_pct = a.e / a.n;
      table.rows.push_back(row);
    }
  };
  for (std::size_t li = 0; li < labels.size(); ++li) emit(labels[li], li + 1);
  emit("all", 0);
  return table;
}

inline std::string format_table(const EvalTable& table) {
  std::ostringstream os;
  os << "illum      range  pairs    PSNR     SAM    RMSE%  ERGAS%\n";
  char buf[160];
  for (const auto& r : table.rows) {
    std::snprintf(buf, sizeof(buf), "%-10s %-6s %5zu %7.2f %7.3f %8.3f %7.3f\n",
                  r.illum_label.c_str(), r.range_name.c_str(), r.n_pairs, r.psnr_db,
                  r.sam_deg, r.rmse_pct, r.ergas_pct);
    os << buf;
  }
  return os.str();
}

}  // namespace hsical

#endif  // HSICAL_TRAINER_HPP_
