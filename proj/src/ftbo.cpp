#include "apfn/ftbo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace apfn::ftbo {

TaskTable::TaskTable(const taskgen::TaskBundle& bundle) {
  if (bundle.configs.empty() || bundle.epochs == 0) {
    throw std::invalid_argument("TaskTable: empty bundle");
  }
  task_id_ = bundle.task_id;
  epochs_ = bundle.epochs;
  configs_.reserve(bundle.configs.size());
  for (const auto& c : bundle.configs) configs_.push_back(hpspace::normalize(c));
  curves_ = bundle.curves;
  best_ = curves_[0][0];
  worst_ = curves_[0][0];
  for (const auto& row : curves_) {
    for (double v : row) {
      best_ = std::max(best_, v);
      worst_ = std::min(worst_, v);
    }
  }
}

double TaskTable::score(std::size_t config_id, std::size_t epoch) const {
  if (config_id >= curves_.size() || epoch < 1 || epoch > epochs_) {
    throw std::out_of_range("TaskTable::score: bad config/epoch");
  }
  return curves_[config_id][epoch - 1];
}

Policy policy_from_string(const std::string& s) {
  if (s == "ftbo") return Policy::kFtbo;
  if (s == "random") return Policy::kRandom;
  if (s == "hyperband") return Policy::kHyperband;
  if (s == "asha") return Policy::kAsha;
  if (s == "sh") return Policy::kSh;
  throw std::invalid_argument("unknown policy '" + s + "'");
}

std::string to_string(Policy p) {
  switch (p) {
    case Policy::kFtbo: return "ftbo";
    case Policy::kRandom: return "random";
    case Policy::kHyperband: return "hyperband";
    case Policy::kAsha: return "asha";
    case Policy::kSh: return "sh";
  }
  return "?";
}

namespace {

std::vector<surrogate::CurvePoint> context_from_state(
    const FreezeThawState& state, const TaskTable& table,
    int max_context, std::mt19937_64& rng) {
  std::vector<surrogate::CurvePoint> ctx;
  for (const auto& rec : state.records) {
    for (std::size_t e = 1; e <= rec.observed.size(); ++e) {
      surrogate::CurvePoint p;
      p.x = table.config(rec.config_id);
      p.t = static_cast<double>(e) / static_cast<double>(table.max_epochs());
      p.y = rec.observed[e - 1];
      p.has_y = true;
      ctx.push_back(p);
    }
  }
  if (static_cast<int>(ctx.size()) > max_context) {
    std::vector<std::size_t> keep(ctx.size());
    std::iota(keep.begin(), keep.end(), 0);
    for (int i = 0; i < max_context; ++i) {
      std::uniform_int_distribution<std::size_t> d(i, keep.size() - 1);
      std::swap(keep[i], keep[d(rng)]);
    }
    keep.resize(max_context);
    std::sort(keep.begin(), keep.end());
    std::vector<surrogate::CurvePoint> sub;
    sub.reserve(keep.size());
    for (std::size_t i : keep) sub.push_back(ctx[i]);
    ctx = std::move(sub);
  }
  return ctx;
}

const ConfigRecord* find_record(const FreezeThawState& state, std::size_t id) {
  for (const auto& r : state.records) {
    if (r.config_id == id) return &r;
  }
  return nullptr;
}

void observe(FreezeThawState& state, const TaskTable& table, std::size_t id,
             std::vector<TrajectoryPoint>* trajectory) {
  ConfigRecord* rec = nullptr;
  for (auto& r : state.records) {
    if (r.config_id == id) rec = &r;
  }
  if (!rec) {
    state.records.push_back({id, {}});
    rec = &state.records.back();
  }
  const std::size_t epoch = rec->observed.size() + 1;
  const double y = table.score(id, epoch);
  rec->observed.push_back(y);
  ++state.budget_used;
  if (!state.has_incumbent || y > state.incumbent_score) {
    state.incumbent_score = y;
    state.incumbent_config = id;
    state.has_incumbent = true;
  }
  if (trajectory) {
    trajectory->push_back({state.budget_used, id, epoch, y,
                           state.incumbent_score});
  }
}

}  // namespace

double mfpi_score(const FreezeThawState& state,
                  const surrogate::Predictor& predictor,
                  const TaskTable& table, std::size_t candidate_id,
                  const AcquisitionSample& sample, std::mt19937_64& rng) {
  const auto* rec = find_record(state, candidate_id);
  const std::size_t t_c = rec ? rec->observed.size() : 0;
  if (t_c + sample.horizon > table.max_epochs()) {
    throw std::out_of_range("mfpi_score: horizon past max epochs");
  }
  const double y_best = state.has_incumbent ? state.incumbent_score : 0.0;
  const double thr = std::min(1.0, y_best + sample.threshold);

  auto ctx = context_from_state(state, table, predictor.max_context(), rng);
  surrogate::CurvePoint q;
  q.x = table.config(candidate_id);
  q.t = static_cast<double>(t_c + sample.horizon) /
        static_cast<double>(table.max_epochs());
  const auto dists = predictor(ctx, {q});
  return surrogate::mass_above(dists[0], thr);
}

std::size_t ftbo_step(FreezeThawState& state,
                      const surrogate::Predictor& predictor,
                      const TaskTable& table, std::mt19937_64& rng,
                      const FtboOptions& options,
                      std::vector<TrajectoryPoint>* trajectory) {
  if (state.budget_used >= state.budget_limit) {
    throw std::runtime_error("ftbo_step: budget exhausted");
  }
  const std::size_t t_max = table.max_epochs();

  if (state.records.empty()) {
    // cold start: advance one uniformly random config
    std::uniform_int_distribution<std::size_t> d(0, table.num_configs() - 1);
    const std::size_t id = d(rng);
    observe(state, table, id, trajectory);
    return id;
  }

  std::uniform_int_distribution<std::size_t> h_dist(1, t_max);
  std::uniform_real_distribution<double> u_dist(-4.0, -1.0);
  const std::size_t h_draw = h_dist(rng);
  const double tau = std::pow(10.0, u_dist(rng));

  // frozen partials first, then fresh untried configs up to pool_size
  std::vector<std::size_t> candidates;
  std::vector<char> in_pool(table.num_configs(), 0);
  for (const auto& rec : state.records) {
    if (rec.observed.size() < t_max) {
      candidates.push_back(rec.config_id);
    }
    in_pool[rec.config_id] = 1;
  }
  if (candidates.size() < options.pool_size) {
    std::vector<std::size_t> fresh;
    for (std::size_t i = 0; i < table.num_configs(); ++i) {
      if (!in_pool[i]) fresh.push_back(i);
    }
    const std::size_t want =
        std::min(options.pool_size - candidates.size(), fresh.size());
    for (std::size_t i = 0; i < want; ++i) {
      std::uniform_int_distribution<std::size_t> d(i, fresh.size() - 1);
      std::swap(fresh[i], fresh[d(rng)]);
      candidates.push_back(fresh[i]);
    }
  }
  if (candidates.empty()) {
    throw std::runtime_error("ftbo_step: no advanceable candidate");
  }

  const double y_best = state.has_incumbent ? state.incumbent_score : 0.0;
  const double thr = std::min(1.0, y_best + tau);
  auto ctx = context_from_state(state, table, predictor.max_context(), rng);

  std::vector<surrogate::CurvePoint> queries;
  queries.reserve(candidates.size());
  for (std::size_t id : candidates) {
    const auto* rec = find_record(state, id);
    const std::size_t t_c = rec ? rec->observed.size() : 0;
    const std::size_t h = std::min(h_draw, t_max - t_c);
    surrogate::CurvePoint q;
    q.x = table.config(id);
    q.t = static_cast<double>(t_c + h) / static_cast<double>(t_max);
    queries.push_back(q);
  }
  const auto dists = predictor(ctx, queries);

  // Ties (common once the incumbent saturates the clamped threshold and
  // every mass_above is 0) are broken optimistically by the predicted 95th
  // percentile, so the endgame keeps scouting candidates with upside
  // instead of deepening whichever partial it saw first.
  std::size_t best_i = 0;
  double best_score = -1.0;
  double best_q = -1.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double s = surrogate::mass_above(dists[i], thr);
    const double q = surrogate::quantile_of(dists[i], 0.95);
    if (s > best_score || (s == best_score && q > best_q)) {
      best_score = s;
      best_q = q;
      best_i = i;
    }
  }
  observe(state, table, candidates[best_i], trajectory);
  return candidates[best_i];
}

std::vector<std::size_t> hyperband_rungs(std::size_t min_b, std::size_t max_b,
                                         std::size_t eta) {
  if (min_b < 1 || min_b > max_b || eta < 2) {
    throw std::invalid_argument("hyperband_rungs: need 1 <= min_b <= max_b "
                                "and eta >= 2");
  }
  std::size_t s_max = 0;
  // largest s with max_b / eta^s >= min_b
  while (max_b / static_cast<std::size_t>(std::pow(double(eta), double(s_max + 1))) >=
         min_b) {
    ++s_max;
  }
  std::vector<std::size_t> rungs(s_max + 1);
  for (std::size_t i = 0; i <= s_max; ++i) {
    const double denom = std::pow(static_cast<double>(eta),
                                  static_cast<double>(s_max - i));
    rungs[i] = static_cast<std::size_t>(
        std::floor(static_cast<double>(max_b) / denom));
  }
  return rungs;
}

std::vector<std::size_t> sh_promote(const std::vector<double>& scores,
                                    std::size_t eta) {
  if (scores.empty()) {
    throw std::invalid_argument("sh_promote: empty results");
  }
  const std::size_t n = scores.size();
  const std::size_t keep = (n + eta - 1) / eta;  // ceil(n/eta)
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&scores](std::size_t a, std::size_t b) {
                     return scores[a] > scores[b];
                   });
  order.resize(keep);
  return order;
}

AshaAction asha_decide(const std::vector<std::vector<AshaEntry>>& rungs,
                       std::size_t eta) {
  if (rungs.size() >= 2) {
    for (std::size_t k = rungs.size() - 1; k-- > 0;) {
      const auto& entries = rungs[k];
      if (entries.empty()) continue;
      const std::size_t m = entries.size() / eta;  // top 1/eta
      if (m == 0) continue;
      std::vector<std::size_t> order(entries.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&entries](std::size_t a, std::size_t b) {
                         return entries[a].score > entries[b].score;
                       });
      for (std::size_t r = 0; r < m; ++r) {
        if (!entries[order[r]].promoted) {
          return {true, k, order[r]};
        }
      }
    }
  }
  return {false, 0, 0};
}

namespace {

class PolicyRun {
 public:
  PolicyRun(const TaskTable& table, std::size_t budget, std::uint64_t seed)
      : table_(table), rng_(seed) {
    state_.budget_limit = budget;
  }

  bool done() const { return state_.budget_used >= state_.budget_limit; }

  // Advance config to target_epoch (inclusive) or until the budget ends.
  void run_to(std::size_t id, std::size_t target_epoch) {
    const auto* rec = find_record(state_, id);
    std::size_t cur = rec ? rec->observed.size() : 0;
    while (cur < target_epoch && !done()) {
      observe(state_, table_, id, &trajectory_);
      ++cur;
    }
  }

  std::size_t current_epoch(std::size_t id) const {
    const auto* rec = find_record(state_, id);
    return rec ? rec->observed.size() : 0;
  }

  double score_at(std::size_t id, std::size_t epoch) const {
    return table_.score(id, epoch);
  }

  // Advance any not-yet-finished config one epoch; false when the whole
  // table has been consumed.
  bool advance_any() {
    for (std::size_t id = 0; id < table_.num_configs(); ++id) {
      if (current_epoch(id) < table_.max_epochs()) {
        observe(state_, table_, id, &trajectory_);
        return true;
      }
    }
    return false;
  }

  // Fresh config ids in shuffled order, cycling through the table.
  std::size_t next_fresh() {
    if (fresh_.empty()) {
      fresh_.resize(table_.num_configs());
      std::iota(fresh_.begin(), fresh_.end(), 0);
      std::shuffle(fresh_.begin(), fresh_.end(), rng_);
      fresh_pos_ = 0;
    }
    if (fresh_pos_ >= fresh_.size()) {
      std::shuffle(fresh_.begin(), fresh_.end(), rng_);
      fresh_pos_ = 0;
    }
    return fresh_[fresh_pos_++];
  }

  const TaskTable& table_;
  std::mt19937_64 rng_;
  FreezeThawState state_;
  std::vector<TrajectoryPoint> trajectory_;
  std::vector<std::size_t> fresh_;
  std::size_t fresh_pos_ = 0;
};

void run_random(PolicyRun& run) {
  while (!run.done()) {
    const std::size_t before = run.state_.budget_used;
    const std::size_t id = run.next_fresh();
    run.run_to(id, run.table_.max_epochs());
    if (run.state_.budget_used == before) break;  // table exhausted
  }
}

void run_sh_bracket(PolicyRun& run, const std::vector<std::size_t>& rungs,
                    std::size_t start_rung, std::size_t n_init,
                    std::size_t eta) {
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n_init && i < run.table_.num_configs(); ++i) {
    active.push_back(run.next_fresh());
  }
  for (std::size_t k = start_rung; k < rungs.size() && !run.done(); ++k) {
    for (std::size_t id : active) {
      run.run_to(id, rungs[k]);
      if (run.done()) return;
    }
    if (k + 1 == rungs.size()) break;
    std::vector<double> scores;
    scores.reserve(active.size());
    for (std::size_t id : active) scores.push_back(run.score_at(id, rungs[k]));
    const auto keep = sh_promote(scores, eta);
    std::vector<std::size_t> next;
    next.reserve(keep.size());
    for (std::size_t i : keep) next.push_back(active[i]);
    active = std::move(next);
  }
}

void run_sh(PolicyRun& run, std::size_t eta) {
  const auto rungs = hyperband_rungs(1, run.table_.max_epochs(), eta);
  const std::size_t n0 = static_cast<std::size_t>(
      std::pow(static_cast<double>(eta), static_cast<double>(rungs.size() - 1)));
  while (!run.done()) {
    const std::size_t before = run.state_.budget_used;
    run_sh_bracket(run, rungs, 0, n0, eta);
    if (run.state_.budget_used == before) break;  // table exhausted
  }
}

void run_hyperband(PolicyRun& run, std::size_t eta) {
  const auto rungs = hyperband_rungs(1, run.table_.max_epochs(), eta);
  const std::size_t s_max = rungs.size() - 1;
  while (!run.done()) {
    const std::size_t before = run.state_.budget_used;
    for (std::size_t s = s_max + 1; s-- > 0 && !run.done();) {
      const double n = std::ceil(static_cast<double>(s_max + 1) /
                                 static_cast<double>(s + 1)) *
                       std::pow(static_cast<double>(eta),
                                static_cast<double>(s));
      run_sh_bracket(run, rungs, s_max - s, static_cast<std::size_t>(n), eta);
    }
    if (run.state_.budget_used == before) break;  // table exhausted
  }
}

void run_asha(PolicyRun& run, std::size_t eta) {
  const auto rungs = hyperband_rungs(1, run.table_.max_epochs(), eta);
  std::vector<std::vector<AshaEntry>> table(rungs.size());
  std::size_t started = 0;
  while (!run.done()) {
    AshaAction act = asha_decide(table, eta);
    if (!act.promote && started >= run.table_.num_configs()) {
      // no fresh configs left; force-promote the best unpromoted anywhere
      bool found = false;
      for (std::size_t k = 0; k + 1 < table.size() && !found; ++k) {
        for (std::size_t i = 0; i < table[k].size(); ++i) {
          if (!table[k][i].promoted) {
            act = {true, k, i};
            found = true;
            break;
          }
        }
      }
      if (!found) break;
    }
    if (act.promote) {
      auto& entry = table[act.rung][act.index];
      entry.promoted = true;
      const std::size_t target = rungs[act.rung + 1];
      run.run_to(entry.config_id, target);
      if (run.current_epoch(entry.config_id) >= target) {
        table[act.rung + 1].push_back(
            {entry.config_id, run.score_at(entry.config_id, target), false});
      }
    } else {
      const std::size_t id = run.next_fresh();
      ++started;
      run.run_to(id, rungs[0]);
      if (run.current_epoch(id) >= rungs[0]) {
        table[0].push_back({id, run.score_at(id, rungs[0]), false});
      }
    }
  }
}

void run_ftbo(PolicyRun& run, const surrogate::Predictor& predictor,
              const FtboOptions& options) {
  while (!run.done()) {
    ftbo_step(run.state_, predictor, run.table_, run.rng_, options,
              &run.trajectory_);
  }
}

}  // namespace

std::vector<TrajectoryPoint> run_policy(const TaskTable& table, Policy policy,
                                        std::size_t budget_epochs,
                                        std::uint64_t seed,
                                        const surrogate::Predictor* predictor,
                                        const FtboOptions& options) {
  if (budget_epochs < 1) {
    throw std::invalid_argument("run_policy: budget must be >= 1");
  }
  if (budget_epochs > table.num_configs() * table.max_epochs()) {
    throw std::invalid_argument(
        "run_policy: budget exceeds the table's total epoch capacity");
  }
  PolicyRun run(table, budget_epochs, seed);
  switch (policy) {
    case Policy::kRandom:
      run_random(run);
      break;
    case Policy::kSh:
      run_sh(run, 3);
      break;
    case Policy::kHyperband:
      run_hyperband(run, 3);
      break;
    case Policy::kAsha:
      run_asha(run, 3);
      break;
    case Policy::kFtbo:
      if (!predictor) {
        throw std::invalid_argument("run_policy: ftbo needs a predictor");
      }
      run_ftbo(run, *predictor, options);
      break;
  }
  // A bracket-structured policy can exhaust its plan with budget to spare;
  // spend the remainder on unfinished configs so every run consumes exactly
  // budget_epochs.
  while (!run.done() && run.advance_any()) {
  }
  return run.trajectory_;
}

void write_trajectory(const std::vector<TrajectoryPoint>& trajectory,
                      const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "epoch_spent,config_id,epoch_of_config,observed_score,incumbent_score\n";
  for (const auto& p : trajectory) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%.17g,%.17g\n",
                  p.epochs_spent, p.config_id, p.epoch_of_config,
                  p.observed_score, p.incumbent_score);
    f << buf;
  }
}

std::vector<TrajectoryPoint> load_trajectory(
    const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<TrajectoryPoint> out;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    TrajectoryPoint p;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    p.epochs_spent = std::stoull(cell);
    std::getline(ss, cell, ',');
    p.config_id = std::stoull(cell);
    std::getline(ss, cell, ',');
    p.epoch_of_config = std::stoull(cell);
    std::getline(ss, cell, ',');
    p.observed_score = std::stod(cell);
    std::getline(ss, cell, ',');
    p.incumbent_score = std::stod(cell);
    out.push_back(p);
  }
  return out;
}

}  // namespace apfn::ftbo
