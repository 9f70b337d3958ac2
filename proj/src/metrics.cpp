#include "pbtseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pbtseg/csv.hpp"
#include "pbtseg/stats.hpp"

namespace pbtseg {

std::string_view to_string(EvalChannel c) {
  switch (c) {
    case EvalChannel::T2H: return "T2H";
    case EvalChannel::ET: return "ET";
    case EvalChannel::CC: return "CC";
    case EvalChannel::WT: return "WT";
  }
  return "?";
}

EvalChannel parse_eval_channel(std::string_view s) {
  for (auto c : kEvalChannels) {
    if (to_string(c) == s) return c;
  }
  throw std::invalid_argument("unknown channel '" + std::string(s) + "'");
}

EvalChannel to_eval_channel(Channel c) {
  switch (c) {
    case Channel::T2H: return EvalChannel::T2H;
    case Channel::ET: return EvalChannel::ET;
    case Channel::CC: return EvalChannel::CC;
  }
  return EvalChannel::WT;
}

std::string_view to_string(EmptyPolicy p) { return p == EmptyPolicy::Exclude ? "exclude" : "one"; }

EmptyPolicy parse_empty_policy(std::string_view s) {
  if (s == "exclude") return EmptyPolicy::Exclude;
  if (s == "one") return EmptyPolicy::One;
  throw std::invalid_argument("empty policy must be 'exclude' or 'one'");
}

std::optional<double> dice(const BinaryMask& a, const BinaryMask& b, EmptyPolicy policy) {
  require_compatible(a.geometry(), b.geometry(), "dice operands");
  const auto ba = a.bits();
  const auto bb = b.bits();
  std::size_t na = 0, nb = 0, overlap = 0;
  for (std::size_t i = 0; i < ba.size(); ++i) {
    na += ba[i];
    nb += bb[i];
    overlap += ba[i] & bb[i];
  }
  if (na == 0 && nb == 0) {
    if (policy == EmptyPolicy::One) return 1.0;
    return std::nullopt;
  }
  return 2.0 * static_cast<double>(overlap) / static_cast<double>(na + nb);
}

std::optional<double> volume_difference_pct(double vol_pred_ml, double vol_ref_ml) {
  if (vol_pred_ml < 0.0 || vol_ref_ml < 0.0) throw std::invalid_argument("volumes must be non-negative");
  if (vol_ref_ml == 0.0) return std::nullopt;
  return 100.0 * std::abs(vol_pred_ml - vol_ref_ml) / vol_ref_ml;
}

namespace {

MetricRecord score(const std::string& case_id, EvalChannel channel, const BinaryMask& pred, const BinaryMask& ref,
                   EmptyPolicy policy) {
  MetricRecord r;
  r.case_id = case_id;
  r.channel = channel;
  r.dsc = dice(pred, ref, policy);
  r.vol_pred_ml = mask_volume_ml(pred);
  r.vol_ref_ml = mask_volume_ml(ref);
  r.vol_diff_pct = volume_difference_pct(r.vol_pred_ml, r.vol_ref_ml);
  r.ref_empty = ref.empty();
  r.pred_empty = pred.empty();
  return r;
}

}  // namespace

std::array<MetricRecord, 4> evaluate_case(const std::string& case_id, const LabelVolume& pred, const LabelVolume& ref,
                                          EmptyPolicy policy) {
  require_compatible(pred.geometry(), ref.geometry(), "case " + case_id);
  std::array<MetricRecord, 4> out;
  for (std::size_t k = 0; k < kAllChannels.size(); ++k) {
    const auto ch = kAllChannels[k];
    out[k] = score(case_id, to_eval_channel(ch), channel_mask(pred, ch), channel_mask(ref, ch), policy);
  }
  out[3] = score(case_id, EvalChannel::WT, whole_tumour_mask(pred), whole_tumour_mask(ref), policy);
  return out;
}

std::vector<MetricRecord> pairwise_agreement(const LabelSet& reference, const LabelSet& other, EmptyPolicy policy) {
  std::vector<std::string> missing;
  for (const auto& [id, _] : reference) {
    if (!other.count(id)) missing.push_back(id);
  }
  for (const auto& [id, _] : other) {
    if (!reference.count(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string msg = "case sets differ:";
    for (const auto& id : missing) msg += " " + id;
    throw std::invalid_argument(msg);
  }
  std::vector<MetricRecord> records;
  records.reserve(reference.size() * 4);
  for (const auto& [id, ref] : reference) {
    const auto recs = evaluate_case(id, other.at(id), ref, policy);
    records.insert(records.end(), recs.begin(), recs.end());
  }
  return records;
}

std::string_view to_string(Metric m) { return m == Metric::Dice ? "dsc" : "vol_diff_pct"; }

std::string_view to_string(StratifierAxis a) {
  switch (a) {
    case StratifierAxis::None: return "none";
    case StratifierAxis::TumourType: return "type";
    case StratifierAxis::Location: return "location";
  }
  return "?";
}

StratifierAxis parse_stratifier(std::string_view s) {
  if (s == "none") return StratifierAxis::None;
  if (s == "type" || s == "tumour_type") return StratifierAxis::TumourType;
  if (s == "location") return StratifierAxis::Location;
  throw std::invalid_argument("stratifier must be type, location or none");
}

std::vector<AggregateRow> aggregate(const std::vector<MetricRecord>& records, Metric metric, StratifierAxis axis,
                                    const CaseManifest* manifest) {
  if (axis != StratifierAxis::None && manifest == nullptr) {
    throw std::invalid_argument("stratified aggregation needs a manifest");
  }

  std::vector<std::string> strata;
  if (axis == StratifierAxis::None) {
    strata.emplace_back("All");
  } else if (axis == StratifierAxis::TumourType) {
    for (auto t : kAllTumourTypes) strata.emplace_back(to_string(t));
  } else {
    for (auto l : kAllLocations) strata.emplace_back(to_string(l));
  }

  auto stratum_of = [&](const MetricRecord& r) -> std::string {
    if (axis == StratifierAxis::None) return "All";
    const auto& info = manifest->at(r.case_id);
    return std::string(axis == StratifierAxis::TumourType ? to_string(info.tumour_type) : to_string(info.location));
  };

  // deterministic reduction order
  std::vector<const MetricRecord*> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const MetricRecord* a, const MetricRecord* b) { return a->case_id < b->case_id; });

  std::vector<AggregateRow> rows;
  for (auto channel : kEvalChannels) {
    for (const auto& stratum : strata) {
      AggregateRow row;
      row.channel = channel;
      row.metric = metric;
      row.axis = axis;
      row.stratum = stratum;
      std::vector<double> values;
      for (const auto* r : sorted) {
        if (r->channel != channel || stratum_of(*r) != stratum) continue;
        const auto& v = metric == Metric::Dice ? r->dsc : r->vol_diff_pct;
        if (v) {
          values.push_back(*v);
        } else {
          ++row.excluded;
        }
      }
      const auto s = summarize(values);
      row.n = s.n;
      row.median = s.median;
      row.sd = s.sd;
      row.mean = s.mean;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& records,
                       const std::vector<std::pair<std::string, std::string>>& provenance) {
  for (const auto& [k, v] : provenance) out << '#' << k << '=' << v << '\n';
  out << csv::join(kMetricsHeader) << '\n';
  for (const auto& r : records) {
    out << csv::join({r.case_id, std::string(to_string(r.channel)), csv::format_optional(r.dsc),
                      csv::format_number(r.vol_pred_ml), csv::format_number(r.vol_ref_ml),
                      csv::format_optional(r.vol_diff_pct), r.ref_empty ? "true" : "false",
                      r.pred_empty ? "true" : "false"})
        << '\n';
  }
}

MetricsFile parse_metrics_csv(std::string_view text) {
  const auto table = csv::parse(text);
  csv::require_header(table, kMetricsHeader);
  MetricsFile file;
  for (const auto& c : table.comments) {
    const auto eq = c.find('=');
    if (eq == std::string::npos) continue;
    file.provenance.emplace_back(c.substr(0, eq), c.substr(eq + 1));
  }
  auto parse_bool = [](const std::string& s, std::size_t line) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw csv::ParseError(line, "expected true/false, got '" + s + "'");
  };
  for (const auto& row : table.rows) {
    if (row.fields.size() != kMetricsHeader.size()) throw csv::ParseError(row.line, "wrong field count");
    try {
      MetricRecord r;
      r.case_id = row.fields[0];
      r.channel = parse_eval_channel(row.fields[1]);
      r.dsc = csv::parse_optional(row.fields[2]);
      r.vol_pred_ml = csv::parse_number(row.fields[3]);
      r.vol_ref_ml = csv::parse_number(row.fields[4]);
      r.vol_diff_pct = csv::parse_optional(row.fields[5]);
      r.ref_empty = parse_bool(row.fields[6], row.line);
      r.pred_empty = parse_bool(row.fields[7], row.line);
      file.records.push_back(std::move(r));
    } catch (const std::invalid_argument& e) {
      throw csv::ParseError(row.line, e.what());
    }
  }
  return file;
}

MetricsFile read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_metrics_csv(ss.str());
  } catch (const csv::ParseError& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows,
                         const std::vector<std::pair<std::string, std::string>>& provenance) {
  for (const auto& [k, v] : provenance) out << '#' << k << '=' << v << '\n';
  out << csv::join(kAggregateHeader) << '\n';
  for (const auto& r : rows) {
    out << csv::join({std::string(to_string(r.metric)), std::string(to_string(r.channel)),
                      std::string(to_string(r.axis)), r.stratum, std::to_string(r.n), std::to_string(r.excluded),
                      csv::format_optional(r.median), csv::format_optional(r.sd), csv::format_optional(r.mean)})
        << '\n';
  }
}

}  // namespace pbtseg
