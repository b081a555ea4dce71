#include "divdir/sweep.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "divdir/training.hpp"

namespace divdir {

const char* const kSweepHeader = "model_id,attack,norm,eps,alpha,steps,random_start,accuracy,examples";

void SweepGrid::validate() const {
  if (eps.empty()) throw std::invalid_argument("sweep: eps grid is empty");
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (!(eps[i] >= 0.0) || !std::isfinite(eps[i])) throw std::invalid_argument("sweep: eps must be finite and >= 0");
    if (i > 0 && !(eps[i] > eps[i - 1])) throw std::invalid_argument("sweep: eps values must be strictly increasing");
  }
  for (double e : eps) cell(e).validate();
}

AttackConfig SweepGrid::cell(double e) const {
  AttackConfig c;
  c.norm = norm;
  c.eps_max = e;
  c.steps = steps;
  c.random_start = random_start;
  c.draws_for_gradient = draws_for_gradient;
  c.alpha = steps == 1 ? e : std::min(alpha, e);
  // a zero budget is an identity attack; keep alpha valid for multi-step grids
  if (steps > 1 && e == 0.0) c.alpha = alpha;
  return c;
}

nlohmann::json sweep_grid_to_json(const SweepGrid& g) {
  return {{"norm", to_string(g.norm)},
          {"eps", g.eps},
          {"alpha", g.alpha},
          {"steps", g.steps},
          {"random_start", g.random_start},
          {"draws_for_gradient", g.draws_for_gradient}};
}

SweepGrid sweep_grid_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("sweep: expected an object");
  for (const auto& [k, _] : j.items()) {
    if (k != "norm" && k != "eps" && k != "alpha" && k != "steps" && k != "random_start" && k != "draws_for_gradient")
      throw std::invalid_argument("sweep: unknown key '" + k + "'");
  }
  SweepGrid g;
  g.norm = norm_from(j.value("norm", to_string(g.norm)));
  if (j.contains("eps")) g.eps = j["eps"].get<std::vector<double>>();
  g.alpha = j.value("alpha", g.alpha);
  g.steps = j.value("steps", g.steps);
  g.random_start = j.value("random_start", g.random_start);
  g.draws_for_gradient = j.value("draws_for_gradient", g.draws_for_gradient);
  g.validate();
  return g;
}

std::string attack_kind(const AttackConfig& c) {
  if (c.steps == 1 && !c.random_start && c.alpha == c.eps_max) return c.norm == Norm::linf ? "fgsm" : "fgm";
  return c.random_start ? "pgd" : "bim";
}

void SweepResult::validate() const {
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& a = rows[i - 1];
    const auto& b = rows[i];
    const bool same_run = a.model_id == b.model_id && a.attack == b.attack && a.norm == b.norm;
    if (same_run && !(b.eps > a.eps)) throw std::invalid_argument("sweep result: eps not strictly increasing");
  }
}

std::string sweep_csv_row(const SweepRow& r) {
  return r.model_id + "," + r.attack + "," + to_string(r.norm) + "," + format_number(r.eps) + "," +
         format_number(r.alpha) + "," + std::to_string(r.steps) + "," + (r.random_start ? "1" : "0") + "," +
         format_number(r.accuracy) + "," + std::to_string(r.examples);
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& res) {
  res.validate();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << kSweepHeader << '\n';
  for (const auto& r : res.rows) os << sweep_csv_row(r) << '\n';
}

std::string model_id(const std::filesystem::path& checkpoint) {
  std::ifstream is(checkpoint, std::ios::binary);
  if (!is) throw std::runtime_error("missing checkpoint " + checkpoint.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::istreambuf_iterator<char> it(is), end; it != end; ++it) {
    h ^= static_cast<unsigned char>(*it);
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

SweepResult sweep(const Dataset& data, const BayesianNetwork& net, const SweepGrid& grid, const std::string& id,
                  std::uint64_t seed, std::size_t predict_draws, std::size_t batch_size) {
  grid.validate();
  SweepResult res;
  for (double e : grid.eps) {
    const AttackConfig cfg = grid.cell(e);
    const auto ev = evaluate_attack(data, net, cfg, seed, predict_draws, batch_size);
    res.rows.push_back({id, attack_kind(cfg), cfg.norm, e, cfg.alpha, cfg.steps, cfg.random_start, ev.accuracy,
                        ev.examples});
  }
  return res;
}

}  // namespace divdir
