#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace sorbfit::data {

enum class Lithology { Clay = 0, Shale = 1, Coal = 2 };
inline constexpr std::array<Lithology, 3> kLithologies{Lithology::Clay, Lithology::Shale, Lithology::Coal};

std::string_view to_string(Lithology l) noexcept;
/// Case-insensitive; nullopt for anything other than clay/shale/coal.
std::optional<Lithology> parse_lithology(std::string_view s);

/// Lowercase, trim, collapse runs of non-alphanumerics to '_', strip
/// leading/trailing '_'.
std::string normalize_key(std::string_view raw);

struct IsothermRecord {
  std::string sample_key;
  Lithology lithology = Lithology::Clay;
  double pressure = 0.0;     // bar
  double temperature = 0.0;  // K
  double uptake = 0.0;       // mmol/g
};

inline constexpr double kMaxPressureBar = 200.0;
inline constexpr double kMinTemperatureK = 20.0;
inline constexpr double kMaxTemperatureK = 400.0;

struct SamplePropertySet {
  std::string sample_key;
  Lithology lithology = Lithology::Clay;
  std::optional<double> surface_area;           // m2/g
  std::optional<double> pore_volume;            // cm3/g
  std::optional<double> micropore_volume;       // cm3/g
  std::optional<double> avg_pore_diameter;      // nm
  std::optional<double> toc;                    // wt%
  std::optional<double> fixed_carbon;           // wt%
  std::optional<double> volatile_matter;        // wt%
  std::optional<double> vitrinite_reflectance;  // %Ro
  std::optional<double> ash;                    // wt%
  std::optional<double> moisture;               // wt%
  // Coal ultimate/maceral analysis; rarely reported.
  std::optional<double> carbon;                 // wt%
  std::optional<double> hydrogen;               // wt%
  std::optional<double> vitrinite;              // vol%
  std::optional<double> inertinite;             // vol%
  std::map<std::string, double> mineral_fractions;  // wt%, absent key = missing
  std::optional<double> characteristic_uptake;  // mmol/g

  bool operator==(const SamplePropertySet&) const = default;
};

/// Scalar property columns in CSV order, with an accessor per column.
struct PropertyColumn {
  std::string_view name;
  std::optional<double> SamplePropertySet::*member;
  bool is_weight_percent;
};
const std::vector<PropertyColumn>& property_columns();
inline constexpr std::string_view kMineralPrefix = "mineral_";
inline constexpr std::string_view kMineralSuffix = "_wt";

/// Isotherm point joined with the sample's properties. Property-only samples
/// produce a single record with no pressure/temperature and the
/// characteristic uptake as `uptake`.
struct IntegratedRecord {
  std::string sample_key;
  Lithology lithology = Lithology::Clay;
  std::optional<double> pressure;
  std::optional<double> temperature;
  std::optional<double> uptake;
  std::optional<SamplePropertySet> properties;

  bool has_isotherm() const { return pressure.has_value(); }
};

struct Reject {
  std::size_t row = 0;  // 1-based data row (header excluded)
  std::string reason;
  std::string line;
};

struct IsothermIngest {
  std::vector<IsothermRecord> records;
  std::vector<Reject> rejects;
};

struct PropertyIngest {
  std::vector<SamplePropertySet> records;
  std::vector<Reject> rejects;
};

inline constexpr std::string_view kIsothermHeader =
    "sample_key,lithology,pressure_bar,temperature_K,uptake_mmol_g";

IsothermIngest ingest_isotherms(const std::filesystem::path& path);
IsothermIngest parse_isotherms(std::string_view csv_text);
PropertyIngest ingest_properties(const std::filesystem::path& path);
PropertyIngest parse_properties(std::string_view csv_text);

void write_isotherms_csv(const std::filesystem::path& path, const std::vector<IsothermRecord>& recs);
void write_properties_csv(const std::filesystem::path& path, const std::vector<SamplePropertySet>& props);
void write_rejects_csv(const std::filesystem::path& path, const std::vector<Reject>& rejects);

struct JoinCoverage {
  std::size_t isotherm_records = 0;
  std::size_t matched_records = 0;    // isotherm points that found properties
  std::size_t property_only_records = 0;
  std::size_t unmatched_property_samples = 0;  // no isotherm, no characteristic uptake
};

std::vector<IntegratedRecord> match_samples(const std::vector<SamplePropertySet>& props,
                                            const std::vector<IsothermRecord>& isos,
                                            JoinCoverage* coverage = nullptr);

inline constexpr double kMonotonicityTolerance = 1e-6;  // mmol/g

struct MonotonicityViolation {
  std::string sample_key;
  double temperature = 0.0;
  std::size_t pressure_index = 0;  // index within the pressure-sorted group
  std::size_t record_index = 0;    // index into the assessed record list
};

struct QualityReport {
  std::vector<std::pair<std::string, double>> completeness;
  std::vector<MonotonicityViolation> monotonicity_violations;
  std::vector<bool> iqr_outlier_flags;
  std::size_t excluded_count = 0;

  bool operator==(const QualityReport& o) const;
};

QualityReport assess_quality(const std::vector<IntegratedRecord>& records,
                             double eps_mono = kMonotonicityTolerance);

/// 1.5*IQR fence flags for a single column (helper exposed for tests).
std::vector<bool> iqr_fence_flags(const std::vector<double>& values, double multiplier = 1.5);

enum class Partition { Train = 0, Validation = 1, Test = 2 };
std::string_view to_string(Partition p) noexcept;

struct SplitRatios {
  double train = 0.70;
  double validation = 0.15;
  double test = 0.15;
};

struct SplitAssignment {
  std::map<std::string, Partition> partition;
  std::uint64_t seed = 0;

  Partition of(const std::string& key) const { return partition.at(key); }
  std::array<std::size_t, 3> counts() const;
};

/// Sample-level stratified split. Global sizes follow floor(train),
/// floor(validation), remainder to test; each lithology's counts stay within
/// one sample of its proportional share.
SplitAssignment stratified_split(const std::vector<std::pair<std::string, Lithology>>& samples,
                                 SplitRatios ratios, std::uint64_t seed);

nlohmann::json to_json(const QualityReport& r);
nlohmann::json to_json(const SplitAssignment& s);
SplitAssignment split_from_json(const nlohmann::json& j);

}  // namespace sorbfit::data

namespace sorbfit {

/// Lithology saturation capacities (mmol/g) used by the physics losses and
/// metrics.
struct QmaxTable {
  double clay = 1.2;
  double shale = 1.0;
  double coal = 0.88;

  double of(data::Lithology l) const {
    switch (l) {
      case data::Lithology::Clay: return clay;
      case data::Lithology::Shale: return shale;
      case data::Lithology::Coal: return coal;
    }
    return clay;
  }
  bool operator==(const QmaxTable&) const = default;
};

}  // namespace sorbfit
