#include "mcglm/simulate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>

#include "mcglm/covariance.hpp"
#include "mcglm/error.hpp"
#include "mcglm/estimation.hpp"

namespace mcglm {

std::vector<VectorXd> simulate_gaussian(const ModelSpec& spec, const ParameterState& state,
                                        std::mt19937_64& rng) {
  const MeanState mean = mean_state(spec, state);
  const JointCovariance cov = joint_covariance(spec, state, mean);
  VectorXd y = stacked_mean(mean);
  std::normal_distribution<double> normal;
  for (std::size_t g = 0; g < cov.n_groups(); ++g) {
    const Eigen::LLT<MatrixXd> llt(cov.block(g).c);
    if (llt.info() != Eigen::Success) throw InfeasiblePoint("simulation: C is not positive definite");
    VectorXd z(cov.block(g).c.rows());
    for (Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    const VectorXd local = cov.gather(g, y) + llt.matrixL() * z;
    cov.scatter(g, local, y);
  }
  const Index N = spec.n_rows();
  std::vector<VectorXd> out;
  for (Index r = 0; r < spec.n_responses(); ++r) out.push_back(y.segment(r * N, N));
  return out;
}

ModelSpec with_responses(ModelSpec spec, const std::vector<VectorXd>& y) {
  if (static_cast<Index>(y.size()) != spec.n_responses()) {
    throw SpecificationError("with_responses: one vector per response required");
  }
  for (std::size_t r = 0; r < y.size(); ++r) spec.responses[r].y = y[r];
  return spec;
}

std::string hunting_fixture_csv(std::uint64_t seed) {
  constexpr int kHunters = 52;
  constexpr int kMonths = 33;
  constexpr std::size_t kRows = 1216;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif;
  std::normal_distribution<double> normal;

  struct Record {
    int hunter;
    int month;
    bool snare;
    int alt;
    int days;
  };
  struct Hunter {
    bool male;
    int home_alt;
    double snare_rate;
    double u_bd;
    double u_ot;
  };
  std::vector<Hunter> hunters;
  std::vector<std::vector<Record>> cells;  // per hunter-month
  std::uniform_int_distribution<int> alt_dist(0, 4);
  for (int h = 0; h < kHunters; ++h) {
    hunters.push_back({unif(rng) < 0.8, alt_dist(rng), unif(rng), 0.6 * normal(rng), 0.5 * normal(rng)});
    const int start = h == 0 ? 1 : 1 + static_cast<int>(unif(rng) * 10);
    const int end = h == 0 ? kMonths : kMonths - static_cast<int>(unif(rng) * 10);
    for (int m = start; m <= end; ++m) {
      if (m != start && m != end && unif(rng) > 0.45) continue;
      std::poisson_distribution<int> extra(1.0);
      const int k = std::min(16, 1 + extra(rng));
      std::vector<Record> cell;
      for (int j = 0; j < k; ++j) {
        const int alt = unif(rng) < 0.7 ? hunters[h].home_alt : alt_dist(rng);
        std::poisson_distribution<int> days(6.0);
        cell.push_back({h, m, unif(rng) < hunters[h].snare_rate, alt, 1 + days(rng)});
      }
      cells.push_back(std::move(cell));
    }
  }
  auto total = [&] {
    std::size_t n = 0;
    for (const auto& c : cells) n += c.size();
    return n;
  };
  // Trim or pad records to the target size, never emptying a hunter-month.
  while (total() > kRows) {
    auto& c = cells[static_cast<std::size_t>(unif(rng) * cells.size())];
    if (c.size() > 1) c.pop_back();
  }
  while (total() < kRows) {
    auto& c = cells[static_cast<std::size_t>(unif(rng) * cells.size())];
    if (c.size() >= 16) continue;
    Record r = c.front();
    r.snare = unif(rng) < hunters[r.hunter].snare_rate;
    r.alt = unif(rng) < 0.7 ? hunters[r.hunter].home_alt : alt_dist(rng);
    std::poisson_distribution<int> days(6.0);
    r.days = 1 + days(rng);
    c.push_back(r);
  }

  constexpr std::array<double, 5> alt_bd{0.0, -0.25, -0.5, 0.15, 0.3};
  constexpr std::array<double, 5> alt_ot{0.0, 0.2, -0.1, -0.3, 0.1};
  std::ostringstream out;
  out << "HUNTER,MONTH,HUNTER.MONTH,SEX,METHOD,ALT,OFFSET,BD,OT\n";
  for (const auto& cell : cells) {
    const double v_bd = 0.5 * normal(rng);
    const double v_ot = 0.4 * normal(rng);
    for (const auto& r : cell) {
      const Hunter& h = hunters[r.hunter];
      const double t = (r.month - 17.0) / 10.0;
      const double trend = 0.3 * t - 0.5 * t * t - 0.2 * t * t * t;
      const double log_days = std::log(static_cast<double>(r.days));
      const double eta_bd = -1.6 + 0.7 * r.snare + alt_bd[r.alt] + 0.35 * h.male + trend + log_days +
                            h.u_bd + v_bd + 0.3 * normal(rng);
      const double eta_ot = -2.6 + 0.3 * r.snare + alt_ot[r.alt] + 0.1 * h.male + 0.5 * trend +
                            log_days + h.u_ot + v_ot + 0.3 * normal(rng);
      std::poisson_distribution<int> bd(std::exp(eta_bd));
      std::poisson_distribution<int> ot(std::exp(eta_ot));
      char hid[16];
      std::snprintf(hid, sizeof hid, "H%02d", r.hunter + 1);
      out << hid << ',' << r.month << ',' << hid << '.' << r.month << ','
          << (h.male ? "Male" : "Female") << ',' << (r.snare ? "Snare" : "Firearm") << ','
          << r.alt + 1 << ',' << r.days << ',' << bd(rng) << ',' << ot(rng) << '\n';
    }
  }
  return out.str();
}

}  // namespace mcglm
