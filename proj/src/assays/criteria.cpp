#include "soma/assays/criteria.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace soma {

namespace {

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string num(double v) { return fmt("%.4g", v); }

const char* kFull = "full";
const char* kNoCon = "no_conation";
const char* kNoBody = "no_body_to_g";

CriterionResult skipped(int id, std::string name, std::string why) {
  return {id, std::move(name), Verdict::Skipped, std::move(why)};
}

}  // namespace

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Pass: return "PASS";
    case Verdict::Fail: return "FAIL";
    default: return "SKIPPED";
  }
}

std::string format_criterion(const CriterionResult& c) {
  return std::string(verdict_name(c.verdict)) + "  [" + std::to_string(c.id) + "] " + c.name +
         (c.detail.empty() ? "" : " :: " + c.detail);
}

const CohortStats* FindingStats::cohort(const std::string& name) const {
  for (const auto& c : cohorts)
    if (c.name == name) return &c;
  return nullptr;
}

FindingStats compute_finding_stats(const std::vector<AssayRow>& rows, const std::vector<std::string>& cohort_order,
                                   int permutation_draws, const RngStream& rng, double expected_injection) {
  FindingStats out;
  out.expected_injection = expected_injection;
  std::map<std::string, std::vector<double>> spectrum, displacement;
  std::vector<double> pooled_disp, pooled_spec;
  for (const std::string& name : cohort_order) {
    std::vector<double> tr, bot, gap, r, disp, spec, sdist, shock;
    std::array<std::vector<double>, kNumActions> q;
    for (const AssayRow& row : rows) {
      if (row.cohort != name) continue;
      tr.push_back(row.top_right_occupancy);
      bot.push_back(row.bottom_occupancy);
      gap.push_back(row.q_by_action[0] - row.q_by_action[1]);
      for (std::size_t a = 0; a < kNumActions; ++a) q[a].push_back(row.q_by_action[a]);
      r.push_back(row.eta_calibration_r);
      disp.push_back(row.pca_displacement);
      spec.push_back(row.spectrum_distance);
      sdist.push_back(row.state_distance);
      shock.push_back(row.shock_magnitude);
      out.pre_shock_identical = out.pre_shock_identical && row.pre_shock_identical;
      out.injections_exact = out.injections_exact && row.shock_injected == expected_injection;
    }
    if (tr.empty()) continue;
    CohortStats c;
    c.name = name;
    c.n = static_cast<int>(tr.size());
    c.top_right = spread(tr);
    c.bottom = spread(bot);
    c.q_gap = spread(gap);
    for (std::size_t a = 0; a < kNumActions; ++a) c.q[a] = spread(q[a]);
    c.calibration_r = spread(r);
    c.pca_displacement = spread(disp);
    c.spectrum_distance = spread(spec);
    c.state_distance = spread(sdist);
    c.shock_magnitude = spread(shock);
    out.cohorts.push_back(c);
    spectrum[name] = spec;
    displacement[name] = disp;
    pooled_disp.insert(pooled_disp.end(), disp.begin(), disp.end());
    pooled_spec.insert(pooled_spec.end(), spec.begin(), spec.end());
  }
  for (std::size_t i = 0; i < out.cohorts.size(); ++i)
    for (std::size_t j = i + 1; j < out.cohorts.size(); ++j) {
      const std::string &a = out.cohorts[i].name, &b = out.cohorts[j].name;
      if (spectrum[a].size() < 3 || spectrum[b].size() < 3) continue;
      out.spectrum_tests[a + " vs " + b] = mannwhitney(spectrum[a], spectrum[b]);
      out.displacement_tests[a + " vs " + b] = mannwhitney(displacement[a], displacement[b]);
    }
  out.residue_n = static_cast<int>(pooled_disp.size());
  if (pooled_disp.size() >= 3) {
    out.residue = spearman(pooled_disp, pooled_spec);
    out.residue_permutation_p = spearman_permutation_p(pooled_disp, pooled_spec, permutation_draws, rng);
  }
  return out;
}

std::vector<CriterionResult> evaluate_findings(const FindingStats& s, int min_seeds) {
  std::vector<CriterionResult> out;
  const CohortStats* full = s.cohort(kFull);
  const CohortStats* nocon = s.cohort(kNoCon);
  const CohortStats* nobody = s.cohort(kNoBody);
  const bool all_present = full && nocon && nobody;
  int min_n = all_present ? std::min({full->n, nocon->n, nobody->n}) : 0;
  for (const auto& c : s.cohorts) min_n = all_present ? std::min(min_n, c.n) : min_n;
  const bool enough = all_present && min_n >= min_seeds;
  const std::string why = !all_present ? "requires all three cohorts"
                                       : "insufficient n (" + std::to_string(min_n) + " seeds per cohort, need " +
                                             std::to_string(min_seeds) + ")";

  {
    CriterionResult c{4, "Shock bookkeeping", Verdict::Pass, ""};
    c.detail = std::string("pre-shock identical: ") + (s.pre_shock_identical ? "yes" : "no") +
               "; injected " + num(s.expected_injection) + " exactly: " + (s.injections_exact ? "yes" : "no");
    bool ok = s.pre_shock_identical && s.injections_exact && !s.cohorts.empty();
    if (enough) {
      for (const auto& ch : s.cohorts) {
        const double m = ch.shock_magnitude.median;
        c.detail += "; " + ch.name + " median du " + num(m);
        ok = ok && m >= -1.45 && m <= -1.05;
      }
    } else {
      c.detail += "; median du range not checked (" + why + ")";
    }
    c.verdict = ok ? Verdict::Pass : Verdict::Fail;
    out.push_back(c);
  }

  if (!enough) {
    out.push_back(skipped(5, "Conation drives behaviour", why));
    out.push_back(skipped(6, "Calibration in all cohorts", why));
    out.push_back(skipped(7, "Readiness dissociation", why));
    out.push_back(skipped(8, "Geometric residue", why));
    out.push_back(skipped(9, "Residue coupling", why));
    return out;
  }

  {
    const double chance = 1.0 / 9.0;
    const double tf = full->top_right.median, tb = nobody->top_right.median, tn = nocon->top_right.median;
    const double bf = full->bottom.median, bb = nobody->bottom.median, bn = nocon->bottom.median;
    const bool ok = tf > tn && tb > tn && tf >= 2 * chance && tb >= 2 * chance && bf < bn && bb < bn;
    out.push_back({5, "Conation drives behaviour", ok ? Verdict::Pass : Verdict::Fail,
                   "top-right full " + num(tf) + ", no_body_to_g " + num(tb) + ", no_conation " + num(tn) +
                       " (2x chance " + num(2 * chance) + "); bottom full " + num(bf) + ", no_body_to_g " + num(bb) +
                       ", no_conation " + num(bn)});
  }
  {
    bool ok = true;
    std::string detail = "median r:";
    for (const auto& ch : s.cohorts) {
      detail += " " + ch.name + " " + num(ch.calibration_r.median);
      ok = ok && ch.calibration_r.median >= 0.8;
    }
    out.push_back({6, "Calibration in all cohorts", ok ? Verdict::Pass : Verdict::Fail, detail + " (need >= 0.8)"});
  }
  {
    const double gf = full->q_gap.median, gb = nobody->q_gap.median, gn = nocon->q_gap.median;
    const bool ok = gf > 0.05 && gb > 0.05 && std::abs(gn) < gf && std::abs(gn) < gb;
    out.push_back({7, "Readiness dissociation", ok ? Verdict::Pass : Verdict::Fail,
                   "median q(UP)-q(DOWN): full " + num(gf) + ", no_body_to_g " + num(gb) + ", no_conation " +
                       num(gn)});
  }
  {
    const double df = full->pca_displacement.median, dn = nocon->pca_displacement.median,
                 db = nobody->pca_displacement.median;
    const double sf = full->spectrum_distance.median, sn = nocon->spectrum_distance.median,
                 sb = nobody->spectrum_distance.median;
    auto test = [&](const std::string& a, const std::string& b) {
      auto it = s.spectrum_tests.find(a + " vs " + b);
      if (it == s.spectrum_tests.end()) it = s.spectrum_tests.find(b + " vs " + a);
      return it == s.spectrum_tests.end() ? 1.0 : it->second.p;
    };
    const double p_full = test(kFull, kNoBody), p_nocon = test(kNoCon, kNoBody);
    const bool disp_ok = df >= dn && dn > db && db < 0.5 * std::min(df, dn);
    const bool spec_ok = sf >= sn && sn > sb && p_full < 0.05 && p_nocon < 0.05;
    out.push_back({8, "Geometric residue", disp_ok && spec_ok ? Verdict::Pass : Verdict::Fail,
                   "displacement full " + num(df) + ", no_conation " + num(dn) + ", no_body_to_g " + num(db) +
                       "; spectrum full " + num(sf) + ", no_conation " + num(sn) + ", no_body_to_g " + num(sb) +
                       "; rank-sum p full/no_body_to_g " + num(p_full) + ", no_conation/no_body_to_g " +
                       num(p_nocon)});
  }
  {
    const bool ok = s.residue.rho > 0.3 && s.residue_permutation_p < 0.1;
    out.push_back({9, "Residue coupling", ok ? Verdict::Pass : Verdict::Fail,
                   "Spearman rho " + num(s.residue.rho) + " over " + std::to_string(s.residue_n) +
                       " pairs, permutation p " + num(s.residue_permutation_p)});
  }
  return out;
}

}  // namespace soma
