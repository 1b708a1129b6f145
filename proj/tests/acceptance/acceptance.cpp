// Acceptance suite: one PASS/FAIL line per criterion.
//
//   routerank_acceptance [--work DIR] [--only 1,3,7]
//
// Criteria 5, 6 and 8 share the three full-scale pipeline runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "routerank/dcrmodel.hpp"
#include "routerank/evalkit.hpp"
#include "routerank/ndiff.hpp"
#include "routerank/pipeline.hpp"
#include "routerank/synthworld.hpp"
#include "routerank/userclust.hpp"

using namespace routerank;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. gradients

nd::Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  nd::Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

double weighted_sum(const nd::Tensor& y, const nd::Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

double simple_layer_error() {
  using namespace nd;
  Rng rng(101);
  const double eps = 1e-4;
  double worst = 0.0;
  auto track = [&](const std::function<double()>& f, std::vector<GradTarget> targets) {
    worst = std::max(worst, grad_check(f, targets, eps).max_rel_err);
  };

  auto x = random_tensor({4, 3}, rng), w = random_tensor({3, 5}, rng), b = random_tensor({5}, rng);
  auto r = random_tensor({4, 5}, rng);
  Tensor dx, dw(w.shape()), db(b.shape());
  linear_backward(x, w, r, &dx, dw, db);
  track([&] { return weighted_sum(linear_forward(x, w, b), r); }, {{"x", &x, &dx}, {"w", &w, &dw}, {"b", &b, &db}});

  auto a = random_tensor({4, 5}, rng, 2.0);
  for (double& v : a.values())
    if (std::abs(v) < 1e-2) v = 0.3;
  auto d_relu = relu_backward(a, r);
  track([&] { return weighted_sum(relu_forward(a), r); }, {{"relu", &a, &d_relu}});
  auto d_sig = sigmoid_backward(sigmoid_forward(a), r);
  track([&] { return weighted_sum(sigmoid_forward(a), r); }, {{"sigmoid", &a, &d_sig}});
  auto d_tanh = tanh_backward(tanh_forward(a), r);
  track([&] { return weighted_sum(tanh_forward(a), r); }, {{"tanh", &a, &d_tanh}});

  auto table = random_tensor({6, 5}, rng);
  std::vector<std::int64_t> ids{0, 5, 5, 2};
  Tensor dtable(table.shape());
  embedding_backward(ids, r, dtable);
  track([&] { return weighted_sum(embedding_forward(ids, table), r); }, {{"table", &table, &dtable}});

  auto x0 = random_tensor({4, 5}, rng), xl = random_tensor({4, 5}, rng);
  auto cw = random_tensor({5, 5}, rng), cb = random_tensor({5}, rng);
  CrossCache cc;
  cross_forward(x0, xl, cw, cb, &cc);
  Tensor dx0, dxl, dcw(cw.shape()), dcb(cb.shape());
  cross_backward(x0, xl, cw, cc, r, dx0, dxl, dcw, dcb);
  track([&] { return weighted_sum(cross_forward(x0, xl, cw, cb), r); },
        {{"x0", &x0, &dx0}, {"xl", &xl, &dxl}, {"cw", &cw, &dcw}, {"cb", &cb, &dcb}});

  const std::size_t h = 5;
  auto lx = random_tensor({4, 3}, rng), h0 = random_tensor({4, h}, rng), c0 = random_tensor({4, h}, rng);
  auto wx = random_tensor({3, 4 * h}, rng, 0.5), wh = random_tensor({h, 4 * h}, rng, 0.5);
  auto lb = random_tensor({4 * h}, rng, 0.5);
  auto rc = random_tensor({4, h}, rng);
  const auto cache = lstm_cell_forward(lx, h0, c0, LstmWeights{wx, wh, lb});
  Tensor dwx(wx.shape()), dwh(wh.shape()), dlb(lb.shape());
  auto g = lstm_cell_backward(cache, LstmWeights{wx, wh, lb}, r, rc, dwx, dwh, dlb);
  track(
      [&] {
        const auto s = lstm_cell_forward(lx, h0, c0, LstmWeights{wx, wh, lb});
        return weighted_sum(s.h, r) + weighted_sum(s.c, rc);
      },
      {{"lx", &lx, &g.dx}, {"h0", &h0, &g.dh_prev}, {"c0", &c0, &g.dc_prev}, {"wx", &wx, &dwx}, {"wh", &wh, &dwh},
       {"lb", &lb, &dlb}});
  return worst;
}

nd::GradCheckResult composition_error() {
  DcrConfig cfg;
  cfg.link_embed_dim = 3;
  cfg.seq_proj_dim = 4;
  cfg.lstm_hidden = 4;
  cfg.deep_hidden = {6, 4};
  cfg.sparse_embed_dim = 2;
  cfg.max_seq_len = 5;
  cfg.seed = 7;
  DcrSchema schema;
  schema.dense_dim = 5;
  schema.profile_dim = 3;
  schema.n_clusters = 3;
  schema.vocab = {10, 11, 12, 13};
  auto model = DcrModel::create(cfg, schema);

  Rng rng(8);
  // Zero-initialized biases put dead-unit rows exactly on a relu kink.
  for (nd::Param* p : model.parameters())
    for (double& v : p->value.values()) v += rng.uniform(-0.1, 0.1);
  std::vector<DcrSample> samples(8);
  for (auto& s : samples) {
    for (int k = 0; k < 5; ++k) s.dense.push_back(rng.normal());
    for (int k = 0; k < 3; ++k) s.profile.push_back(rng.uniform());
    s.day_of_week = static_cast<int>(rng.below(7));
    s.hour_of_day = static_cast<int>(rng.below(24));
    s.cluster_id = static_cast<int>(rng.below(3));
    const auto len = 1 + rng.below(5);
    for (std::uint64_t t = 0; t < len; ++t)
      s.steps.push_back({static_cast<LinkId>(10 + rng.below(4)), rng.uniform(100, 900),
                         static_cast<std::uint8_t>(1 + rng.below(3)), static_cast<std::uint8_t>(rng.below(4)),
                         static_cast<std::uint8_t>(rng.below(4))});
    s.y = rng.uniform() < 0.5 ? 1.0 : 0.0;
  }
  model.fit_normalization(samples);
  std::vector<const DcrSample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  std::vector<double> y;
  for (const auto& s : samples) y.push_back(s.y);

  auto loss = [&] {
    DcrBatchCache c;
    const auto logits = model.forward(batch, c);
    std::vector<double> p;
    for (double z : logits) p.push_back(1.0 / (1.0 + std::exp(-z)));
    return nd::bce_loss(p, y);
  };
  model.zero_grad();
  DcrBatchCache cache;
  const auto logits = model.forward(batch, cache);
  std::vector<double> dlogit;
  for (std::size_t i = 0; i < logits.size(); ++i)
    dlogit.push_back((1.0 / (1.0 + std::exp(-logits[i])) - y[i]) / static_cast<double>(logits.size()));
  model.backward(cache, dlogit);
  std::vector<nd::GradTarget> targets;
  for (nd::Param* p : model.parameters()) targets.push_back({p->name, &p->value, &p->grad});
  return nd::grad_check(loss, targets, 1e-5);
}

Verdict criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const double simple = simple_layer_error();
  const auto full = composition_error();
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = simple < 1e-6 && full.max_rel_err < 1e-4 && secs < 60.0;
  v.detail = "simple layers max rel err " + sci(simple) + " (< 1e-6), full model " + sci(full.max_rel_err) + " at " +
             full.worst + " (< 1e-4), " + fmt(secs, 1) + " s";
  return v;
}

// ---------------------------------------------------------------------------
// 2. metrics

Verdict criterion_metrics() {
  Rng rng(202);
  std::vector<double> s, y;
  for (int i = 0; i < 200; ++i) {
    s.push_back(static_cast<double>(rng.below(40)) / 40.0);
    y.push_back(rng.uniform() < 0.35 ? 1.0 : 0.0);
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1.0 && y[j] == 0.0) {
        den += 1.0;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  const double auc_err = std::abs(*auc(s, y) - num / den);

  WorldConfig wc;
  wc.n_users = 25;
  wc.trips_per_user = 10;
  wc.seed = 202;
  const World world = generate_world(wc);
  const auto data = generate_trips(world, wc);
  double ir_err = 0.0;
  std::size_t pairs = 0;
  for (const auto& t : data.trips) {
    for (const auto& c : t.candidates) {
      if (pairs == 500) break;
      std::set<LinkId> cand(c.links.begin(), c.links.end());
      std::set<LinkId> shared;
      double dis_t = 0.0, dis_tc = 0.0;
      for (LinkId id : t.driven.links) {
        const double len = world.network.link(id).length;
        dis_t += len;
        if (cand.count(id) && shared.insert(id).second) dis_tc += len;
      }
      ir_err = std::max(ir_err, std::abs(inconsistency_rate(world.network, t.driven, c) - (1.0 - dis_tc / dis_t)));
      ++pairs;
    }
  }
  Verdict v;
  v.pass = auc_err <= 1e-12 && ir_err <= 1e-12 && pairs == 500;
  v.detail = "AUC |diff| " + sci(auc_err) + " on 200 instances, IR max |diff| " + sci(ir_err) +
             " on " + std::to_string(pairs) + " path pairs";
  return v;
}

// ---------------------------------------------------------------------------
// 3. map matching

struct MatchScore {
  double f1 = 0.0;
  std::size_t exact = 0;
  std::size_t unmatched = 0;
  std::size_t trips = 0;
};

MatchScore match_trips(double sigma) {
  WorldConfig wc;
  wc.n_users = 25;
  wc.trips_per_user = 20;
  wc.seed = 303;
  wc.gps_sigma = sigma;
  const World world = generate_world(wc);
  const auto data = generate_trips(world, wc);
  MatchScore m;
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (const auto& t : data.trips) {
    ++m.trips;
    const std::set<LinkId> truth(t.driven.links.begin(), t.driven.links.end());
    std::set<LinkId> got;
    try {
      const auto res = map_match(t.trajectory, world.network);
      got.insert(res.path.links.begin(), res.path.links.end());
      if (res.path.links == t.driven.links) ++m.exact;
    } catch (const UnmatchedPointError&) {
      ++m.unmatched;
    }
    for (LinkId id : got) (truth.count(id) ? tp : fp) += 1.0;
    for (LinkId id : truth)
      if (!got.count(id)) fn += 1.0;
  }
  m.f1 = 2.0 * tp / (2.0 * tp + fp + fn);
  return m;
}

Verdict criterion_map_match() {
  const auto noisy = match_trips(5.0);
  const auto clean = match_trips(0.0);
  Verdict v;
  v.pass = noisy.trips == 500 && noisy.f1 >= 0.95 && clean.exact == clean.trips;
  v.detail = "sigma=5: link F1 " + fmt(noisy.f1) + " over " + std::to_string(noisy.trips) + " trips (" +
             std::to_string(noisy.unmatched) + " unmatched); sigma=0: " + std::to_string(clean.exact) + "/" +
             std::to_string(clean.trips) + " exact";
  return v;
}

// ---------------------------------------------------------------------------
// 4. clustering

Verdict criterion_clustering() {
  WorldConfig wc;
  wc.n_users = 600;
  wc.trips_per_user = 20;
  wc.temperature = 0.5;
  wc.seed = 404;
  const World world = generate_world(wc);
  const TrafficModel traffic(world.network, wc.seed, wc.features);
  Matrix rows;
  std::vector<int> archetype;
  for (const auto& u : world.users) {
    std::vector<TripHistoryItem> hist;
    for (int k = 0; k < wc.trips_per_user; ++k) {
      const auto trip = generate_trip(world, wc, traffic, u, u.user_id * wc.trips_per_user + k);
      const auto snap = traffic.snapshot(trip.departure_time);
      TripHistoryItem h;
      for (const auto& c : trip.candidates)
        h.candidates.push_back(
            extract_route_features(c, world.network, world.grid, snap, trip.departure_time, wc.features));
      h.driven = extract_route_features(trip.driven, world.network, world.grid, snap, trip.departure_time, wc.features);
      const std::size_t fastest = min_eta_rank(h.candidates).front();
      h.ir = inconsistency_rate(world.network, trip.driven, trip.candidates[fastest]);
      hist.push_back(std::move(h));
    }
    rows.push_back(build_user_profile(hist).values());
    archetype.push_back(u.archetype);
  }

  KMeansConfig kc;
  kc.k = kNumArchetypes;
  kc.seed = 404;
  const auto km = kmeans_fit(rows, kc);
  // Purity under the best one-to-one cluster -> archetype matching.
  const auto k = static_cast<std::size_t>(kc.k);
  std::vector<std::vector<std::size_t>> counts(k, std::vector<std::size_t>(kNumArchetypes, 0));
  for (std::size_t i = 0; i < rows.size(); ++i)
    ++counts[static_cast<std::size_t>(km.assignments[i])][static_cast<std::size_t>(archetype[i])];
  std::vector<std::size_t> perm(kNumArchetypes);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t matched = 0;
  do {
    std::size_t hits = 0;
    for (std::size_t c = 0; c < k; ++c) hits += counts[c][perm[c]];
    matched = std::max(matched, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  const double purity = static_cast<double>(matched) / static_cast<double>(rows.size());

  bool monotone = true;
  for (std::size_t t = 1; t < km.inertia_trace.size(); ++t)
    monotone = monotone && km.inertia_trace[t] <= km.inertia_trace[t - 1] * (1.0 + 1e-12);

  Matrix z;
  for (const auto& r : rows) z.push_back(km.standardize(r));
  TsneConfig tc;
  tc.seed = 404;
  const auto emb = tsne_project(z, tc);

  Verdict v;
  v.pass = purity >= 0.90 && monotone && emb.final_kl < emb.initial_kl;
  v.detail = "purity " + fmt(purity) + " (" + std::to_string(rows.size()) + " users x " +
             std::to_string(wc.trips_per_user) + " trips, T=0.5), inertia " +
             (monotone ? "non-increasing" : "INCREASED") + " over " + std::to_string(km.inertia_trace.size()) +
             " iterations, t-SNE KL " + fmt(emb.initial_kl) + " -> " + fmt(emb.final_kl);
  return v;
}

// ---------------------------------------------------------------------------
// 5/6/8. full-scale runs

void run_pipeline(const PipelineConfig& cfg, const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const StageContext ctx{dir, true};
  cmd_gen(cfg, ctx);
  cmd_extract(cfg, ctx);
  cmd_cluster(cfg, ctx);
  cmd_train(cfg, ctx);
  cmd_eval(cfg, ctx);
}

struct MethodMetrics {
  std::optional<double> auc;
  double mean_ir = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  fs::path dir;
  std::map<std::string, MethodMetrics> methods;
  std::size_t n_requests = 0;
  std::size_t test_trips = 0;
  std::size_t n_users = 0;
  std::size_t n_trips = 0;
  std::array<std::size_t, kNumStrata> stratum_sizes{};
  std::map<std::string, std::size_t> method_strata_sum;
};

SeedRun read_run(std::uint64_t seed, const fs::path& dir) {
  SeedRun r;
  r.seed = seed;
  r.dir = dir;
  const Json rep = read_json_file(dir / "eval_report.json");
  r.n_requests = rep.at("n_requests").get<std::size_t>();
  for (std::size_t s = 0; s < kNumStrata; ++s)
    r.stratum_sizes[s] = rep.at("stratum_sizes").at(std::string(to_string(static_cast<Stratum>(s)))).get<std::size_t>();
  for (const auto& m : rep.at("methods")) {
    MethodMetrics mm;
    if (!m.at("auc").is_null()) mm.auc = m.at("auc").get<double>();
    mm.mean_ir = m.at("mean_ir").get<double>();
    const std::string name = m.at("method").get<std::string>();
    r.methods[name] = mm;
    std::size_t sum = 0;
    for (const auto& [k, st] : m.at("strata").items()) sum += st.at("n").get<std::size_t>();
    r.method_strata_sum[name] = sum;
  }
  for (const auto& t : read_trips(dir / "trips.jsonl"))
    if (t.split == Split::kTest) ++r.test_trips;
  const Json gen = read_json_file(manifest_path(dir, "gen"));
  r.n_users = gen.at("config").at("world").at("n_users").get<std::size_t>();
  r.n_trips = r.n_users * gen.at("config").at("world").at("trips_per_user").get<std::size_t>();
  return r;
}

Verdict criterion_ranking(const std::vector<SeedRun>& runs, double secs) {
  Verdict v;
  v.pass = runs.size() == 3 && secs < 1800.0;
  std::ostringstream os;
  for (const auto& r : runs) {
    const auto& eta = r.methods.at("min_eta");
    const auto& noseq = r.methods.at("noseq");
    const auto& dcr = r.methods.at("dcr");
    const bool aucs = eta.auc && noseq.auc && dcr.auc;
    const bool ir_gap = dcr.mean_ir <= eta.mean_ir - 0.03;
    const bool auc_gap = aucs && *dcr.auc > *noseq.auc;
    const bool ir_order = eta.mean_ir > noseq.mean_ir && noseq.mean_ir > dcr.mean_ir;
    const bool auc_order = aucs && *eta.auc < *noseq.auc && *noseq.auc < *dcr.auc;
    const bool scale = r.n_users >= 1000 && r.n_trips >= 20000;
    v.pass = v.pass && ir_gap && auc_gap && ir_order && auc_order && scale;
    os << " seed " << r.seed << ": IR eta/noseq/dcr " << fmt(eta.mean_ir) << "/" << fmt(noseq.mean_ir) << "/"
       << fmt(dcr.mean_ir) << ", AUC " << (eta.auc ? fmt(*eta.auc) : "-") << "/" << (noseq.auc ? fmt(*noseq.auc) : "-")
       << "/" << (dcr.auc ? fmt(*dcr.auc) : "-") << (ir_gap && auc_gap && ir_order && auc_order ? "" : " [violated]")
       << ";";
  }
  v.detail = std::to_string(runs.empty() ? 0 : runs.front().n_users) + " users, " +
             std::to_string(runs.empty() ? 0 : runs.front().n_trips) + " trips, " + fmt(secs, 0) + " s total;" +
             os.str();
  return v;
}

Verdict criterion_strata(const std::vector<SeedRun>& runs) {
  Verdict v;
  v.pass = !runs.empty();
  std::ostringstream os;
  for (const auto& r : runs) {
    const std::size_t sum = r.stratum_sizes[0] + r.stratum_sizes[1] + r.stratum_sizes[2];
    bool ok = sum == r.n_requests && r.n_requests == r.test_trips;
    for (const auto& [name, s] : r.method_strata_sum) ok = ok && s == r.n_requests;
    v.pass = v.pass && ok;
    os << " seed " << r.seed << ": " << r.stratum_sizes[0] << "+" << r.stratum_sizes[1] << "+" << r.stratum_sizes[2]
       << "=" << sum << " of " << r.test_trips << ";";
  }
  v.detail = "short+medium+long vs test size:" + os.str();
  return v;
}

Verdict criterion_checkpoint(const SeedRun& run, const fs::path& work) {
  const auto original = DcrModel::load(run.dir / "dcr.ckpt");
  const fs::path copy = work / "checkpoint_copy.ckpt";
  original.save(copy);
  const auto reloaded = DcrModel::load(copy);

  const auto cands = read_candidates(run.dir / "features.jsonl");
  const auto profiles = read_profiles(run.dir / "profiles.jsonl");
  auto samples = make_samples(cands, profiles, Split::kTest);
  if (samples.size() > 1000) samples.resize(1000);
  const auto a = original.score(samples);
  const auto b = reloaded.score(samples);
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += std::memcmp(&a[i], &b[i], sizeof(double)) == 0;
  Verdict v;
  v.pass = samples.size() == 1000 && same == samples.size() && reloaded == original;
  v.detail = std::to_string(same) + "/" + std::to_string(samples.size()) + " scores bit-identical after save->load";
  return v;
}

// ---------------------------------------------------------------------------
// 7. determinism

Verdict criterion_rerun(const fs::path& work) {
  PipelineConfig cfg = load_pipeline_config(fs::path(ROUTERANK_SOURCE_DIR) / "tests/data/tiny.json");
  const fs::path a = work / "rerun_a", b = work / "rerun_b";
  for (const auto& dir : {a, b}) {
    run_pipeline(cfg, dir);
    cmd_plot(cfg, StageContext{dir, true});
  }
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  std::size_t same = 0;
  std::string differing;
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), {});
  };
  for (const auto& n : names) {
    if (fs::exists(b / n) && slurp(a / n) == slurp(b / n)) ++same;
    else differing += " " + n;
  }
  std::size_t in_b = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(b)) ++in_b;
  Verdict v;
  v.pass = !names.empty() && same == names.size() && in_b == names.size();
  v.detail = std::to_string(same) + "/" + std::to_string(names.size()) + " artifacts byte-identical" +
             (differing.empty() ? "" : "; differ:" + differing);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"routerank acceptance suite"};
  std::string work = "acceptance_work";
  std::string only;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "comma-separated criteria to run");
  CLI11_PARSE(app, argc, argv);

  std::set<int> chosen;
  if (!only.empty()) {
    std::stringstream ss(only);
    std::string tok;
    while (std::getline(ss, tok, ',')) chosen.insert(std::stoi(tok));
  }
  auto want = [&](int c) { return chosen.empty() || chosen.count(c) > 0; };
  const fs::path work_dir = fs::absolute(work);
  fs::create_directories(work_dir);

  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& ex) {
      v = {false, std::string("error: ") + ex.what()};
    }
    failures += v.pass ? 0 : 1;
    std::cout << "criterion " << id << " [" << name << "]: " << (v.pass ? "PASS" : "FAIL") << " - " << v.detail
              << std::endl;
  };

  if (want(1)) report(1, "gradient checks", criterion_gradients);
  if (want(2)) report(2, "metric oracles", criterion_metrics);
  if (want(3)) report(3, "map matching", criterion_map_match);
  if (want(4)) report(4, "user clustering", criterion_clustering);

  std::vector<SeedRun> runs;
  double secs = 0.0;
  std::string run_error;
  if (want(5) || want(6) || want(8)) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const PipelineConfig base = load_pipeline_config(fs::path(ROUTERANK_SOURCE_DIR) / "configs/acceptance.json");
      for (std::uint64_t seed : {1, 2, 3}) {
        PipelineConfig cfg = base;
        cfg.apply_seed(seed);
        const fs::path dir = work_dir / ("seed" + std::to_string(seed));
        run_pipeline(cfg, dir);
        runs.push_back(read_run(seed, dir));
      }
    } catch (const std::exception& ex) {
      run_error = ex.what();
    }
    secs = seconds_since(t0);
  }
  auto guarded = [&](const std::function<Verdict()>& fn) {
    return [&, fn] { return run_error.empty() ? fn() : Verdict{false, "pipeline error: " + run_error}; };
  };
  if (want(5)) report(5, "ranking quality", guarded([&] { return criterion_ranking(runs, secs); }));
  if (want(6)) report(6, "stratum counts", guarded([&] { return criterion_strata(runs); }));
  if (want(7)) report(7, "byte-identical rerun", [&] { return criterion_rerun(work_dir); });
  if (want(8)) report(8, "checkpoint round trip", guarded([&] { return criterion_checkpoint(runs.front(), work_dir); }));

  return failures == 0 ? 0 : 1;
}
