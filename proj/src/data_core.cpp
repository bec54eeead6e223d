#include "sorbfit/data_core.hpp"

#include <algorithm>
#include <functional>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include "sorbfit/error.hpp"
#include "sorbfit/rng.hpp"
#include "sorbfit/stats.hpp"

namespace sorbfit::data {

std::string_view to_string(Lithology l) noexcept {
  switch (l) {
    case Lithology::Clay: return "clay";
    case Lithology::Shale: return "shale";
    case Lithology::Coal: return "coal";
  }
  return "unknown";
}

std::string_view to_string(Partition p) noexcept {
  switch (p) {
    case Partition::Train: return "train";
    case Partition::Validation: return "validation";
    case Partition::Test: return "test";
  }
  return "unknown";
}

namespace {

std::string lower_trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Minimal RFC-4180 style splitter: commas, double-quoted fields, "" escapes.
std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  while (!lines.empty() && lines.back().find_first_not_of(" \t") == std::string_view::npos) lines.pop_back();
  return lines;
}

std::optional<double> parse_double(std::string_view s) {
  std::string t = lower_trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

}  // namespace

std::optional<Lithology> parse_lithology(std::string_view s) {
  const std::string t = lower_trim(s);
  if (t == "clay") return Lithology::Clay;
  if (t == "shale") return Lithology::Shale;
  if (t == "coal") return Lithology::Coal;
  return std::nullopt;
}

std::string normalize_key(std::string_view raw) {
  const std::string t = lower_trim(raw);
  std::string out;
  bool pending_sep = false;
  for (char c : t) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      if (pending_sep && !out.empty()) out.push_back('_');
      pending_sep = false;
      out.push_back(c);
    } else {
      pending_sep = true;
    }
  }
  return out;
}

const std::vector<PropertyColumn>& property_columns() {
  static const std::vector<PropertyColumn> cols{
      {"surface_area_m2_g", &SamplePropertySet::surface_area, false},
      {"pore_volume_cm3_g", &SamplePropertySet::pore_volume, false},
      {"micropore_volume_cm3_g", &SamplePropertySet::micropore_volume, false},
      {"avg_pore_diameter_nm", &SamplePropertySet::avg_pore_diameter, false},
      {"toc_wt", &SamplePropertySet::toc, true},
      {"fixed_carbon_wt", &SamplePropertySet::fixed_carbon, true},
      {"volatile_matter_wt", &SamplePropertySet::volatile_matter, true},
      {"vitrinite_reflectance_pct", &SamplePropertySet::vitrinite_reflectance, false},
      {"ash_wt", &SamplePropertySet::ash, true},
      {"moisture_wt", &SamplePropertySet::moisture, true},
      {"carbon_wt", &SamplePropertySet::carbon, true},
      {"hydrogen_wt", &SamplePropertySet::hydrogen, true},
      {"vitrinite_vol", &SamplePropertySet::vitrinite, true},
      {"inertinite_vol", &SamplePropertySet::inertinite, true},
      {"characteristic_uptake_mmol_g", &SamplePropertySet::characteristic_uptake, false},
  };
  return cols;
}

IsothermIngest parse_isotherms(std::string_view csv_text) {
  const auto lines = split_lines(csv_text);
  if (lines.empty()) throw Error(Errc::EmptyFile, "isotherm file has no header");
  const auto header = split_csv_line(lines[0]);
  static const std::array<std::string_view, 5> required{"sample_key", "lithology", "pressure_bar",
                                                         "temperature_K", "uptake_mmol_g"};
  std::array<std::size_t, 5> pos{};
  for (std::size_t r = 0; r < required.size(); ++r) {
    auto it = std::find_if(header.begin(), header.end(),
                           [&](const std::string& h) { return lower_trim(h) == lower_trim(required[r]); });
    if (it == header.end()) throw Error(Errc::MissingColumn, "isotherm CSV lacks column '" + std::string(required[r]) + "'");
    pos[r] = static_cast<std::size_t>(it - header.begin());
  }
  if (lines.size() == 1) throw Error(Errc::EmptyFile, "isotherm file has no data rows");

  IsothermIngest out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t row = li;
    const auto f = split_csv_line(lines[li]);
    if (f.size() != header.size()) {
      throw Error(Errc::ParseError, "row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                                        " fields, got " + std::to_string(f.size()));
    }
    auto reject = [&](std::string reason) {
      out.rejects.push_back({row, std::move(reason), std::string(lines[li])});
    };
    IsothermRecord rec;
    rec.sample_key = normalize_key(f[pos[0]]);
    if (rec.sample_key.empty()) {
      reject("empty sample key");
      continue;
    }
    auto lith = parse_lithology(f[pos[1]]);
    if (!lith) {
      reject("unknown lithology");
      continue;
    }
    rec.lithology = *lith;
    auto p = parse_double(f[pos[2]]);
    auto t = parse_double(f[pos[3]]);
    auto q = parse_double(f[pos[4]]);
    if (!p || !t || !q) throw Error(Errc::ParseError, "row " + std::to_string(row) + ": non-numeric field");
    rec.pressure = *p;
    rec.temperature = *t;
    rec.uptake = *q;
    if (!std::isfinite(rec.uptake)) reject("non-finite uptake");
    else if (rec.uptake < 0.0) reject("negative uptake");
    else if (!std::isfinite(rec.pressure) || rec.pressure < 0.0 || rec.pressure > kMaxPressureBar)
      reject("pressure outside [0, 200] bar");
    else if (!std::isfinite(rec.temperature) || rec.temperature < kMinTemperatureK || rec.temperature > kMaxTemperatureK)
      reject("temperature outside [20, 400] K");
    else out.records.push_back(std::move(rec));
  }
  return out;
}

IsothermIngest ingest_isotherms(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(Errc::Io, "no such file: " + path.string());
  return parse_isotherms(read_file(path));
}

PropertyIngest parse_properties(std::string_view csv_text) {
  const auto lines = split_lines(csv_text);
  if (lines.empty()) throw Error(Errc::EmptyFile, "property file has no header");
  const auto header = split_csv_line(lines[0]);
  std::vector<std::string> names;
  for (const auto& h : header) names.push_back(lower_trim(h));
  auto find = [&](std::string_view n) -> std::optional<std::size_t> {
    auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names.begin());
  };
  auto key_pos = find("sample_key");
  auto lith_pos = find("lithology");
  if (!key_pos) throw Error(Errc::MissingColumn, "property CSV lacks column 'sample_key'");
  if (!lith_pos) throw Error(Errc::MissingColumn, "property CSV lacks column 'lithology'");

  // Map every remaining header to a scalar column or a mineral; unknown
  // columns are a schema violation.
  std::vector<const PropertyColumn*> scalar(names.size(), nullptr);
  std::vector<std::string> mineral(names.size());
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (c == *key_pos || c == *lith_pos) continue;
    const auto& cols = property_columns();
    auto it = std::find_if(cols.begin(), cols.end(), [&](const PropertyColumn& pc) { return lower_trim(pc.name) == names[c]; });
    if (it != cols.end()) {
      scalar[c] = &*it;
    } else if (names[c].starts_with(kMineralPrefix) && names[c].ends_with(kMineralSuffix) &&
               names[c].size() > kMineralPrefix.size() + kMineralSuffix.size()) {
      mineral[c] = names[c].substr(kMineralPrefix.size(), names[c].size() - kMineralPrefix.size() - kMineralSuffix.size());
    } else {
      throw Error(Errc::MissingColumn, "property CSV has unrecognized column '" + names[c] + "'");
    }
  }
  if (lines.size() == 1) throw Error(Errc::EmptyFile, "property file has no data rows");

  PropertyIngest out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto f = split_csv_line(lines[li]);
    if (f.size() != header.size()) {
      throw Error(Errc::ParseError, "row " + std::to_string(li) + ": expected " + std::to_string(header.size()) +
                                        " fields, got " + std::to_string(f.size()));
    }
    SamplePropertySet ps;
    ps.sample_key = normalize_key(f[*key_pos]);
    auto lith = parse_lithology(f[*lith_pos]);
    std::string reason;
    if (ps.sample_key.empty()) reason = "empty sample key";
    else if (!lith) reason = "unknown lithology";
    else ps.lithology = *lith;
    for (std::size_t c = 0; c < f.size() && reason.empty(); ++c) {
      if (!scalar[c] && mineral[c].empty()) continue;
      if (lower_trim(f[c]).empty()) continue;  // missing
      auto v = parse_double(f[c]);
      if (!v) throw Error(Errc::ParseError, "row " + std::to_string(li) + ": non-numeric value in '" + names[c] + "'");
      const bool pct = scalar[c] ? scalar[c]->is_weight_percent : true;
      if (!std::isfinite(*v) || *v < 0.0) reason = "negative or non-finite " + names[c];
      else if (pct && *v > 100.0) reason = names[c] + " above 100 wt%";
      else if (scalar[c]) ps.*(scalar[c]->member) = *v;
      else ps.mineral_fractions[mineral[c]] = *v;
    }
    if (!reason.empty()) {
      out.rejects.push_back({li, reason, std::string(lines[li])});
      continue;
    }
    out.records.push_back(std::move(ps));
  }
  return out;
}

PropertyIngest ingest_properties(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(Errc::Io, "no such file: " + path.string());
  return parse_properties(read_file(path));
}

void write_isotherms_csv(const std::filesystem::path& path, const std::vector<IsothermRecord>& recs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << kIsothermHeader << '\n';
  for (const auto& r : recs) {
    out << csv_escape(r.sample_key) << ',' << to_string(r.lithology) << ',' << format_number(r.pressure) << ','
        << format_number(r.temperature) << ',' << format_number(r.uptake) << '\n';
  }
}

void write_properties_csv(const std::filesystem::path& path, const std::vector<SamplePropertySet>& props) {
  std::set<std::string> minerals;
  for (const auto& p : props)
    for (const auto& [name, _] : p.mineral_fractions) minerals.insert(name);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << "sample_key,lithology";
  for (const auto& c : property_columns()) out << ',' << c.name;
  for (const auto& m : minerals) out << ',' << kMineralPrefix << m << kMineralSuffix;
  out << '\n';
  for (const auto& p : props) {
    out << csv_escape(p.sample_key) << ',' << to_string(p.lithology);
    for (const auto& c : property_columns()) {
      out << ',';
      if (const auto& v = p.*(c.member)) out << format_number(*v);
    }
    for (const auto& m : minerals) {
      out << ',';
      if (auto it = p.mineral_fractions.find(m); it != p.mineral_fractions.end()) out << format_number(it->second);
    }
    out << '\n';
  }
}

void write_rejects_csv(const std::filesystem::path& path, const std::vector<Reject>& rejects) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << "row,reason,line\n";
  for (const auto& r : rejects) out << r.row << ',' << csv_escape(r.reason) << ',' << csv_escape(r.line) << '\n';
}

std::vector<IntegratedRecord> match_samples(const std::vector<SamplePropertySet>& props,
                                            const std::vector<IsothermRecord>& isos, JoinCoverage* coverage) {
  std::map<std::string, const SamplePropertySet*> by_key;
  for (const auto& p : props) {
    auto [it, inserted] = by_key.emplace(p.sample_key, &p);
    if (!inserted && !(*it->second == p)) {
      throw Error(Errc::DuplicateSampleKey, "conflicting property rows for sample '" + p.sample_key + "'");
    }
  }
  JoinCoverage cov;
  std::set<std::string> with_isotherm;
  std::vector<IntegratedRecord> out;
  out.reserve(isos.size());
  for (const auto& iso : isos) {
    IntegratedRecord r;
    r.sample_key = iso.sample_key;
    r.lithology = iso.lithology;
    r.pressure = iso.pressure;
    r.temperature = iso.temperature;
    r.uptake = iso.uptake;
    if (auto it = by_key.find(iso.sample_key); it != by_key.end()) {
      r.properties = *it->second;
      ++cov.matched_records;
    }
    with_isotherm.insert(iso.sample_key);
    out.push_back(std::move(r));
  }
  cov.isotherm_records = isos.size();
  for (const auto& [key, p] : by_key) {
    if (with_isotherm.contains(key)) continue;
    if (!p->characteristic_uptake) {
      ++cov.unmatched_property_samples;
      continue;
    }
    IntegratedRecord r;
    r.sample_key = key;
    r.lithology = p->lithology;
    r.uptake = p->characteristic_uptake;
    r.properties = *p;
    out.push_back(std::move(r));
    ++cov.property_only_records;
  }
  if (coverage) *coverage = cov;
  return out;
}

std::vector<bool> iqr_fence_flags(const std::vector<double>& values, double multiplier) {
  std::vector<bool> flags(values.size(), false);
  if (values.size() < 4) return flags;
  const auto q = stats::quartiles(values);
  const double lo = q.q1 - multiplier * q.iqr();
  const double hi = q.q3 + multiplier * q.iqr();
  for (std::size_t i = 0; i < values.size(); ++i) flags[i] = values[i] < lo || values[i] > hi;
  return flags;
}

bool QualityReport::operator==(const QualityReport& o) const {
  if (completeness != o.completeness || iqr_outlier_flags != o.iqr_outlier_flags || excluded_count != o.excluded_count)
    return false;
  if (monotonicity_violations.size() != o.monotonicity_violations.size()) return false;
  for (std::size_t i = 0; i < monotonicity_violations.size(); ++i) {
    const auto& a = monotonicity_violations[i];
    const auto& b = o.monotonicity_violations[i];
    if (a.sample_key != b.sample_key || a.temperature != b.temperature || a.pressure_index != b.pressure_index ||
        a.record_index != b.record_index)
      return false;
  }
  return true;
}

QualityReport assess_quality(const std::vector<IntegratedRecord>& records, double eps_mono) {
  QualityReport rep;
  const std::size_t n = records.size();
  rep.iqr_outlier_flags.assign(n, false);
  if (n == 0) return rep;

  // Numeric columns: the three measurement fields, scalar properties, minerals.
  using Getter = std::function<std::optional<double>(const IntegratedRecord&)>;
  std::vector<std::pair<std::string, Getter>> columns{
      {"pressure_bar", [](const IntegratedRecord& r) { return r.pressure; }},
      {"temperature_K", [](const IntegratedRecord& r) { return r.temperature; }},
      {"uptake_mmol_g", [](const IntegratedRecord& r) { return r.uptake; }},
  };
  for (const auto& pc : property_columns()) {
    auto member = pc.member;
    columns.emplace_back(std::string(pc.name), [member](const IntegratedRecord& r) -> std::optional<double> {
      if (!r.properties) return std::nullopt;
      return (*r.properties).*member;
    });
  }
  std::set<std::string> minerals;
  for (const auto& r : records)
    if (r.properties)
      for (const auto& [m, _] : r.properties->mineral_fractions) minerals.insert(m);
  for (const auto& m : minerals) {
    columns.emplace_back(std::string(kMineralPrefix) + m + std::string(kMineralSuffix),
                         [m](const IntegratedRecord& r) -> std::optional<double> {
                           if (!r.properties) return std::nullopt;
                           auto it = r.properties->mineral_fractions.find(m);
                           if (it == r.properties->mineral_fractions.end()) return std::nullopt;
                           return it->second;
                         });
  }

  for (const auto& [name, get] : columns) {
    std::size_t present = 0;
    for (const auto& r : records) present += get(r).has_value() ? 1 : 0;
    rep.completeness.emplace_back(name, static_cast<double>(present) / static_cast<double>(n));
    for (Lithology lith : kLithologies) {
      std::vector<double> vals;
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < n; ++i) {
        if (records[i].lithology != lith) continue;
        if (auto v = get(records[i])) {
          vals.push_back(*v);
          idx.push_back(i);
        }
      }
      const auto flags = iqr_fence_flags(vals);
      for (std::size_t k = 0; k < flags.size(); ++k)
        if (flags[k]) rep.iqr_outlier_flags[idx[k]] = true;
    }
  }

  std::map<std::pair<std::string, double>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    if (!records[i].has_isotherm() || !records[i].temperature || !records[i].uptake) continue;
    groups[{records[i].sample_key, *records[i].temperature}].push_back(i);
  }
  std::vector<bool> mono_flag(n, false);
  for (auto& [key, idx] : groups) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return *records[a].pressure < *records[b].pressure; });
    for (std::size_t k = 1; k < idx.size(); ++k) {
      if (*records[idx[k - 1]].uptake - *records[idx[k]].uptake > eps_mono) {
        rep.monotonicity_violations.push_back({key.first, key.second, k, idx[k]});
        mono_flag[idx[k]] = true;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) rep.excluded_count += (mono_flag[i] || rep.iqr_outlier_flags[i]) ? 1 : 0;
  return rep;
}

std::array<std::size_t, 3> SplitAssignment::counts() const {
  std::array<std::size_t, 3> c{0, 0, 0};
  for (const auto& [_, p] : partition) ++c[static_cast<std::size_t>(p)];
  return c;
}

SplitAssignment stratified_split(const std::vector<std::pair<std::string, Lithology>>& samples, SplitRatios ratios,
                                 std::uint64_t seed) {
  const std::array<double, 3> r{ratios.train, ratios.validation, ratios.test};
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9 || r[0] < 0 || r[1] < 0 || r[2] < 0)
    throw Error(Errc::InvalidArgument, "split ratios must be non-negative and sum to 1");

  std::array<std::vector<std::string>, 3> keys;
  {
    std::map<std::string, Lithology> uniq;
    for (const auto& [k, l] : samples) {
      auto [it, inserted] = uniq.emplace(k, l);
      if (!inserted && it->second != l)
        throw Error(Errc::InvalidArgument, "sample '" + k + "' listed under two lithologies");
    }
    for (const auto& [k, l] : uniq) keys[static_cast<std::size_t>(l)].push_back(k);
  }
  std::size_t total = 0;
  for (std::size_t l = 0; l < 3; ++l) {
    if (!keys[l].empty() && keys[l].size() < 3) {
      throw Error(Errc::InsufficientSamples, "lithology '" + std::string(to_string(static_cast<Lithology>(l))) +
                                                 "' has fewer than 3 samples");
    }
    total += keys[l].size();
  }
  if (total == 0) throw Error(Errc::InsufficientSamples, "no samples to split");

  // Global sizes: floor train and validation, remainder to test.
  const auto n_total = static_cast<double>(total);
  std::array<long, 3> target{static_cast<long>(std::floor(r[0] * n_total)),
                             static_cast<long>(std::floor(r[1] * n_total)), 0};
  target[2] = static_cast<long>(total) - target[0] - target[1];

  // Controlled rounding of the lithology x partition table: among tables
  // whose cells stay within `tol` of the proportional share and whose margins
  // match the row sizes and global targets, take the one closest to the
  // shares (squared deviation), first in enumeration order on ties.
  std::array<std::array<double, 3>, 3> ideal{};
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t j = 0; j < 3; ++j) ideal[l][j] = r[j] * static_cast<double>(keys[l].size());
  std::array<std::array<long, 3>, 3> cnt{};
  bool found = false;
  for (double tol = 1.0; !found && tol <= 3.0; tol += 1.0) {
    auto options = [&](std::size_t l, std::size_t j) {
      std::vector<long> v;
      const auto lo = static_cast<long>(std::ceil(ideal[l][j] - tol - 1e-9));
      const auto hi = static_cast<long>(std::floor(ideal[l][j] + tol + 1e-9));
      for (long c = std::max(0L, lo); c <= std::min(hi, static_cast<long>(keys[l].size())); ++c) v.push_back(c);
      return v;
    };
    double best = std::numeric_limits<double>::infinity();
    std::array<std::array<long, 3>, 3> cur{};
    // depth-first over (train, validation) per lithology; test is the row remainder
    std::function<void(std::size_t)> search = [&](std::size_t l) {
      if (l == 3) {
        double cost = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
          long col = 0;
          for (std::size_t m = 0; m < 3; ++m) col += cur[m][j];
          if (col != target[j]) return;
          for (std::size_t m = 0; m < 3; ++m) cost += (cur[m][j] - ideal[m][j]) * (cur[m][j] - ideal[m][j]);
        }
        if (cost < best) {
          best = cost;
          cnt = cur;
          found = true;
        }
        return;
      }
      const auto n_l = static_cast<long>(keys[l].size());
      for (long a : options(l, 0)) {
        for (long b : options(l, 1)) {
          const long c = n_l - a - b;
          if (c < 0 || std::abs(static_cast<double>(c) - ideal[l][2]) > tol + 1e-9) continue;
          cur[l] = {a, b, c};
          search(l + 1);
        }
      }
    };
    search(0);
  }
  if (!found) throw Error(Errc::InsufficientSamples, "cannot balance lithology strata against split sizes");

  SplitAssignment out;
  out.seed = seed;
  for (std::size_t l = 0; l < 3; ++l) {
    auto ks = keys[l];
    Rng rng = make_rng(derive_seed(seed, l));
    shuffle(ks.begin(), ks.end(), rng);
    std::size_t i = 0;
    for (std::size_t j = 0; j < 3; ++j)
      for (long c = 0; c < cnt[l][j]; ++c) out.partition[ks[i++]] = static_cast<Partition>(j);
  }
  return out;
}

nlohmann::json to_json(const QualityReport& r) {
  nlohmann::json j;
  j["completeness"] = nlohmann::json::object();
  for (const auto& [name, v] : r.completeness) j["completeness"][name] = v;
  j["monotonicity_violations"] = nlohmann::json::array();
  for (const auto& v : r.monotonicity_violations) {
    j["monotonicity_violations"].push_back(
        {{"sample_key", v.sample_key}, {"temperature", v.temperature}, {"pressure_index", v.pressure_index},
         {"record_index", v.record_index}});
  }
  j["iqr_outlier_flags"] = r.iqr_outlier_flags;
  j["excluded_count"] = r.excluded_count;
  return j;
}

nlohmann::json to_json(const SplitAssignment& s) {
  nlohmann::json j;
  j["seed"] = s.seed;
  j["partition"] = nlohmann::json::object();
  for (const auto& [k, p] : s.partition) j["partition"][k] = std::string(to_string(p));
  const auto c = s.counts();
  j["counts"] = {{"train", c[0]}, {"validation", c[1]}, {"test", c[2]}};
  return j;
}

SplitAssignment split_from_json(const nlohmann::json& j) {
  SplitAssignment s;
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& [k, v] : j.at("partition").items()) {
    const auto name = v.get<std::string>();
    if (name == "train") s.partition[k] = Partition::Train;
    else if (name == "validation") s.partition[k] = Partition::Validation;
    else if (name == "test") s.partition[k] = Partition::Test;
    else throw Error(Errc::ParseError, "unknown partition '" + name + "'");
  }
  return s;
}

}  // namespace sorbfit::data
