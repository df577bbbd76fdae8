#pragma once

// Demographic personas embedded in elicitation prompts. Panel 1 holds the
// foundational attributes (always present when a persona exists); Panel 2 the
// advanced attributes, present all together or not at all.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace riskprobe {

enum class AgeBand { From15To24, From25To34, From35To44, From45To54, From55To64, Over65 };
enum class Sex { Male, Female };
enum class Education {
  BelowLowerSecondary,
  LowerSecondary,
  UpperSecondary,
  ShortCycleTertiary,
  Bachelor,
  Graduate
};
enum class Marital { NeverMarried, Married, Widowed, Divorced };
enum class Area { Rural, Urban };
enum class Orientation { Heterosexual, Homosexual, Bisexual, Asexual };
enum class Disability { PhysicallyDisabled, AbleBodied };
enum class Race { African, Hispanic, Asian, Caucasian };
enum class Religion { Jewish, Christian, Atheist, Religious };
enum class Politics { LifelongDemocrat, LifelongRepublican, ObamaSupporter, TrumpSupporter };

enum class Attribute {
  Age,
  Sex,
  Education,
  Marital,
  Area,
  Orientation,
  Disability,
  Race,
  Religion,
  Politics
};

inline constexpr std::array<Attribute, 5> kFoundationalAttributes = {
    Attribute::Age, Attribute::Sex, Attribute::Education, Attribute::Marital, Attribute::Area};
inline constexpr std::array<Attribute, 5> kAdvancedAttributes = {
    Attribute::Orientation, Attribute::Disability, Attribute::Race, Attribute::Religion,
    Attribute::Politics};

// Column / JSON key for an attribute, e.g. "age", "politics".
std::string_view attribute_key(Attribute a);
Attribute attribute_from_key(std::string_view key);

// Category labels in enum order, as written in prompts ("15 - 24", "bachelor").
const std::vector<std::string>& category_labels(Attribute a);
int category_from_label(Attribute a, std::string_view label);

struct AdvancedTraits {
  Orientation orientation = Orientation::Heterosexual;
  Disability disability = Disability::AbleBodied;
  Race race = Race::Caucasian;
  Religion religion = Religion::Atheist;
  Politics politics = Politics::LifelongDemocrat;
  bool operator==(const AdvancedTraits&) const = default;
};

struct Persona {
  AgeBand age = AgeBand::From25To34;
  Sex sex = Sex::Male;
  Education education = Education::Bachelor;
  Marital marital = Marital::NeverMarried;
  Area area = Area::Urban;
  std::optional<AdvancedTraits> advanced;

  // Category index of an attribute; nullopt for an absent Panel-2 attribute.
  std::optional<int> category(Attribute a) const;
  void set_category(Attribute a, int index);
  bool operator==(const Persona&) const = default;
};

enum class Regime { ContextFree, RandomUniform, RealWorld, RandomAugmented };

std::string_view to_string(Regime r);
Regime regime_from_string(std::string_view name);

// Per-attribute category weights. Attributes not listed are sampled uniformly.
class DistributionSpec {
 public:
  void set(Attribute a, std::vector<double> weights);
  const std::vector<double>* weights(Attribute a) const;

  // Throws InvariantError on negative weights or sums away from 1 (1e-9).
  void validate() const;

  static DistributionSpec from_json(const nlohmann::json& doc);
  static DistributionSpec load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

 private:
  std::map<Attribute, std::vector<double>> weights_;
};

std::optional<Persona> sample(Regime regime, const DistributionSpec* dist, std::uint64_t seed);

struct RenderOptions {
  bool age_as_midpoint = false;  // "20" instead of "15 - 24"
};

std::string render(const Persona& persona, const RenderOptions& options = {});

// Binary design row; reference categories map to all zeros.
struct DummyRow {
  std::vector<std::string> names;
  std::vector<double> values;
};

const std::vector<std::string>& foundational_dummy_names();
const std::vector<std::string>& advanced_dummy_names();

DummyRow encode(const Persona& persona);

struct PersonaRecord {
  std::string trial_id;
  std::optional<Persona> persona;
};

void write_personas_csv(std::ostream& out, const std::vector<PersonaRecord>& records);
std::vector<PersonaRecord> read_personas_csv(std::istream& in);

nlohmann::json to_json(const Persona& persona);
Persona persona_from_json(const nlohmann::json& doc);

}  // namespace riskprobe
