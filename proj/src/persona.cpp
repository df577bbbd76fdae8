#include "riskprobe/persona.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "riskprobe/csv.hpp"
#include "riskprobe/errors.hpp"
#include "riskprobe/rng.hpp"

namespace riskprobe {

using nlohmann::json;

namespace {

constexpr std::array<Attribute, 10> kAllAttributes = {
    Attribute::Age,         Attribute::Sex,        Attribute::Education, Attribute::Marital,
    Attribute::Area,        Attribute::Orientation, Attribute::Disability, Attribute::Race,
    Attribute::Religion,    Attribute::Politics};

}  // namespace

std::string_view attribute_key(Attribute a) {
  switch (a) {
    case Attribute::Age: return "age";
    case Attribute::Sex: return "sex";
    case Attribute::Education: return "education";
    case Attribute::Marital: return "marital";
    case Attribute::Area: return "area";
    case Attribute::Orientation: return "orientation";
    case Attribute::Disability: return "disability";
    case Attribute::Race: return "race";
    case Attribute::Religion: return "religion";
    case Attribute::Politics: return "politics";
  }
  return "?";
}

Attribute attribute_from_key(std::string_view key) {
  for (Attribute a : kAllAttributes) {
    if (attribute_key(a) == key) return a;
  }
  throw ParseError(fmt::format("unknown persona attribute '{}'", key));
}

const std::vector<std::string>& category_labels(Attribute a) {
  static const std::map<Attribute, std::vector<std::string>> labels = {
      {Attribute::Age, {"15 - 24", "25 - 34", "35 - 44", "45 - 54", "55 - 64", "65+"}},
      {Attribute::Sex, {"male", "female"}},
      {Attribute::Education,
       {"below lower secondary", "lower secondary", "upper secondary", "short-cycle tertiary",
        "bachelor", "graduate"}},
      {Attribute::Marital, {"never married", "married", "widowed", "divorced"}},
      {Attribute::Area, {"rural", "urban"}},
      {Attribute::Orientation, {"heterosexual", "homosexual", "bisexual", "asexual"}},
      {Attribute::Disability, {"physically-disabled", "able-bodied"}},
      {Attribute::Race, {"African", "Hispanic", "Asian", "Caucasian"}},
      {Attribute::Religion, {"Jewish", "Christian", "Atheist", "Religious"}},
      {Attribute::Politics,
       {"lifelong Democrat", "lifelong Republican", "Barack Obama supporter",
        "Donald Trump supporter"}},
  };
  return labels.at(a);
}

int category_from_label(Attribute a, std::string_view label) {
  const auto& labels = category_labels(a);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return static_cast<int>(i);
  }
  throw ParseError(fmt::format("'{}' is not a {} category", label, attribute_key(a)));
}

std::optional<int> Persona::category(Attribute a) const {
  switch (a) {
    case Attribute::Age: return static_cast<int>(age);
    case Attribute::Sex: return static_cast<int>(sex);
    case Attribute::Education: return static_cast<int>(education);
    case Attribute::Marital: return static_cast<int>(marital);
    case Attribute::Area: return static_cast<int>(area);
    default: break;
  }
  if (!advanced) return std::nullopt;
  switch (a) {
    case Attribute::Orientation: return static_cast<int>(advanced->orientation);
    case Attribute::Disability: return static_cast<int>(advanced->disability);
    case Attribute::Race: return static_cast<int>(advanced->race);
    case Attribute::Religion: return static_cast<int>(advanced->religion);
    case Attribute::Politics: return static_cast<int>(advanced->politics);
    default: return std::nullopt;
  }
}

void Persona::set_category(Attribute a, int index) {
  const auto n = static_cast<int>(category_labels(a).size());
  if (index < 0 || index >= n) {
    throw InvariantError(fmt::format("{} category {} out of range", attribute_key(a), index));
  }
  switch (a) {
    case Attribute::Age: age = static_cast<AgeBand>(index); return;
    case Attribute::Sex: sex = static_cast<Sex>(index); return;
    case Attribute::Education: education = static_cast<Education>(index); return;
    case Attribute::Marital: marital = static_cast<Marital>(index); return;
    case Attribute::Area: area = static_cast<Area>(index); return;
    default: break;
  }
  if (!advanced) advanced.emplace();
  switch (a) {
    case Attribute::Orientation: advanced->orientation = static_cast<Orientation>(index); return;
    case Attribute::Disability: advanced->disability = static_cast<Disability>(index); return;
    case Attribute::Race: advanced->race = static_cast<Race>(index); return;
    case Attribute::Religion: advanced->religion = static_cast<Religion>(index); return;
    case Attribute::Politics: advanced->politics = static_cast<Politics>(index); return;
    default: return;
  }
}

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::ContextFree: return "context-free";
    case Regime::RandomUniform: return "random";
    case Regime::RealWorld: return "real-world";
    case Regime::RandomAugmented: return "random-augmented";
  }
  return "?";
}

Regime regime_from_string(std::string_view name) {
  for (Regime r : {Regime::ContextFree, Regime::RandomUniform, Regime::RealWorld,
                   Regime::RandomAugmented}) {
    if (to_string(r) == name) return r;
  }
  throw ParseError(fmt::format("unknown regime '{}'", name));
}

void DistributionSpec::set(Attribute a, std::vector<double> weights) {
  weights_[a] = std::move(weights);
}

const std::vector<double>* DistributionSpec::weights(Attribute a) const {
  auto it = weights_.find(a);
  return it == weights_.end() ? nullptr : &it->second;
}

void DistributionSpec::validate() const {
  for (const auto& [a, w] : weights_) {
    if (w.size() != category_labels(a).size()) {
      throw InvariantError(fmt::format("{}: {} weights for {} categories", attribute_key(a),
                                       w.size(), category_labels(a).size()));
    }
    double sum = 0.0;
    for (double x : w) {
      if (!(x >= 0.0)) throw InvariantError(fmt::format("{}: negative weight", attribute_key(a)));
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw InvariantError(fmt::format("{}: weights sum to {}, expected 1", attribute_key(a), sum));
    }
  }
}

DistributionSpec DistributionSpec::from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("distribution spec must be a JSON object");
  DistributionSpec spec;
  for (const auto& [key, cats] : doc.items()) {
    const Attribute a = attribute_from_key(key);
    if (!cats.is_object()) {
      throw ParseError(fmt::format("{}: expected an object of category weights", key));
    }
    std::vector<double> w(category_labels(a).size(), 0.0);
    for (const auto& [label, weight] : cats.items()) {
      if (!weight.is_number()) throw ParseError(fmt::format("{}.{}: weight must be a number", key, label));
      w[static_cast<size_t>(category_from_label(a, label))] = weight.get<double>();
    }
    spec.set(a, std::move(w));
  }
  spec.validate();
  return spec;
}

DistributionSpec DistributionSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open distribution file '{}'", path.string()));
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

json DistributionSpec::to_json() const {
  json doc = json::object();
  for (const auto& [a, w] : weights_) {
    json cats = json::object();
    const auto& labels = category_labels(a);
    for (size_t i = 0; i < w.size(); ++i) cats[labels[i]] = w[i];
    doc[std::string(attribute_key(a))] = cats;
  }
  return doc;
}

namespace {

int draw_weighted(Engine& rng, const std::vector<double>& weights) {
  const double u = uniform01(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = static_cast<int>(i);
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;
}

int draw_uniform(Engine& rng, Attribute a) {
  return static_cast<int>(uniform_index(rng, category_labels(a).size()));
}

}  // namespace

std::optional<Persona> sample(Regime regime, const DistributionSpec* dist, std::uint64_t seed) {
  if (regime == Regime::ContextFree) return std::nullopt;
  if (regime == Regime::RealWorld && dist == nullptr) {
    throw InvariantError("real-world regime needs a distribution spec");
  }
  Engine rng(seed);
  Persona p;
  for (Attribute a : kFoundationalAttributes) {
    const std::vector<double>* w =
        regime == Regime::RealWorld ? dist->weights(a) : nullptr;
    p.set_category(a, w ? draw_weighted(rng, *w) : draw_uniform(rng, a));
  }
  if (regime == Regime::RandomAugmented) {
    for (Attribute a : kAdvancedAttributes) p.set_category(a, draw_uniform(rng, a));
  }
  return p;
}

namespace {

// Demographic prompt template, line by line; slot tokens kept as written.
constexpr std::string_view kTemplateHead[] = {
    "Imagine a ['Age'] year old ['Gender'] with a ['Education'] degree,",
    "who is ['Marital Status'] and lives in a 'Location'] area.",
};
constexpr std::string_view kTemplateAdvanced[] = {
    "This individual identifies as ['Sexual Orientation'] and is ['Disability'],",
    "of ['Race'] descent, adheres to ['Religion'] beliefs, and supports ['Political Affiliation'] "
    "policies.",
};
constexpr std::string_view kTemplateTail =
    "Consider the risk preferences and decision-making processes of a person with these "
    "characteristics.";

void replace_all(std::string& s, std::string_view token, std::string_view with) {
  for (size_t pos = s.find(token); pos != std::string::npos; pos = s.find(token, pos + with.size())) {
    s.replace(pos, token.size(), with);
  }
}

std::string label(const Persona& p, Attribute a) {
  return category_labels(a)[static_cast<size_t>(*p.category(a))];
}

}  // namespace

std::string render(const Persona& persona, const RenderOptions& options) {
  std::string text;
  for (auto line : kTemplateHead) text.append(line).append("\n");
  if (persona.advanced) {
    for (auto line : kTemplateAdvanced) text.append(line).append("\n");
  }
  text.append(kTemplateTail);

  std::string age = label(persona, Attribute::Age);
  if (options.age_as_midpoint) {
    static constexpr int kMidpoints[] = {20, 30, 40, 50, 60, 70};
    age = std::to_string(kMidpoints[static_cast<int>(persona.age)]);
  }
  replace_all(text, "['Age']", age);
  replace_all(text, "['Gender']", label(persona, Attribute::Sex));
  replace_all(text, "['Education']", label(persona, Attribute::Education));
  replace_all(text, "['Marital Status']", label(persona, Attribute::Marital));
  replace_all(text, "'Location']", label(persona, Attribute::Area));
  if (persona.advanced) {
    replace_all(text, "['Sexual Orientation']", label(persona, Attribute::Orientation));
    replace_all(text, "['Disability']", label(persona, Attribute::Disability));
    replace_all(text, "['Race']", label(persona, Attribute::Race));
    replace_all(text, "['Religion']", label(persona, Attribute::Religion));
    replace_all(text, "['Political Affiliation']", label(persona, Attribute::Politics));
  }
  return text;
}

const std::vector<std::string>& foundational_dummy_names() {
  static const std::vector<std::string> names = {
      "<25 years old", ">55 years old", "Female",  "Lower than High School", "Graduate Level",
      "Married",       "Divorced",      "Widowed", "Rural"};
  return names;
}

const std::vector<std::string>& advanced_dummy_names() {
  static const std::vector<std::string> names = {
      "Asexual",  "Bisexual", "Homosexual", "physically-disabled",    "African",
      "Asian",    "Hispanic", "Christian",  "Jewish",                 "Religious",
      "Barack Obama Supporter", "Donald Trump Supporter", "lifelong Republican"};
  return names;
}

DummyRow encode(const Persona& p) {
  DummyRow row;
  row.names = foundational_dummy_names();
  auto flag = [](bool b) { return b ? 1.0 : 0.0; };
  row.values = {
      flag(p.age == AgeBand::From15To24),
      flag(p.age == AgeBand::From55To64 || p.age == AgeBand::Over65),
      flag(p.sex == Sex::Female),
      flag(p.education == Education::BelowLowerSecondary ||
           p.education == Education::LowerSecondary),
      flag(p.education == Education::Graduate),
      flag(p.marital == Marital::Married),
      flag(p.marital == Marital::Divorced),
      flag(p.marital == Marital::Widowed),
      flag(p.area == Area::Rural),
  };
  if (p.advanced) {
    const auto& a = *p.advanced;
    const auto& names = advanced_dummy_names();
    row.names.insert(row.names.end(), names.begin(), names.end());
    for (double v : {flag(a.orientation == Orientation::Asexual),
                     flag(a.orientation == Orientation::Bisexual),
                     flag(a.orientation == Orientation::Homosexual),
                     flag(a.disability == Disability::PhysicallyDisabled),
                     flag(a.race == Race::African), flag(a.race == Race::Asian),
                     flag(a.race == Race::Hispanic), flag(a.religion == Religion::Christian),
                     flag(a.religion == Religion::Jewish), flag(a.religion == Religion::Religious),
                     flag(a.politics == Politics::ObamaSupporter),
                     flag(a.politics == Politics::TrumpSupporter),
                     flag(a.politics == Politics::LifelongRepublican)}) {
      row.values.push_back(v);
    }
  }
  return row;
}

void write_personas_csv(std::ostream& out, const std::vector<PersonaRecord>& records) {
  std::vector<std::string> header{"trial_id"};
  for (Attribute a : kAllAttributes) header.emplace_back(attribute_key(a));
  out << csv::join(header) << '\n';
  for (const auto& r : records) {
    std::vector<std::string> fields{r.trial_id};
    for (Attribute a : kAllAttributes) {
      const auto c = r.persona ? r.persona->category(a) : std::nullopt;
      fields.push_back(c ? category_labels(a)[static_cast<size_t>(*c)] : std::string());
    }
    out << csv::join(fields) << '\n';
  }
}

std::vector<PersonaRecord> read_personas_csv(std::istream& in) {
  const auto table = csv::Table::read(in);
  std::vector<PersonaRecord> out;
  for (size_t i = 0; i < table.size(); ++i) {
    PersonaRecord rec{table.get(i, "trial_id"), std::nullopt};
    int present_foundational = 0;
    int present_advanced = 0;
    Persona p;
    for (Attribute a : kFoundationalAttributes) {
      const auto& v = table.get(i, attribute_key(a));
      if (v.empty()) continue;
      p.set_category(a, category_from_label(a, v));
      ++present_foundational;
    }
    for (Attribute a : kAdvancedAttributes) {
      if (!table.has_column(attribute_key(a))) continue;
      const auto& v = table.get(i, attribute_key(a));
      if (v.empty()) continue;
      p.set_category(a, category_from_label(a, v));
      ++present_advanced;
    }
    if (present_foundational != 0 && present_foundational != 5) {
      throw ParseError(fmt::format("trial {}: foundational attributes partially filled", rec.trial_id));
    }
    if (present_advanced != 0 && present_advanced != 5) {
      throw ParseError(fmt::format("trial {}: advanced attributes partially filled", rec.trial_id));
    }
    if (present_foundational == 0 && present_advanced != 0) {
      throw ParseError(fmt::format("trial {}: advanced attributes without foundational ones", rec.trial_id));
    }
    if (present_foundational == 5) rec.persona = p;
    out.push_back(std::move(rec));
  }
  return out;
}

json to_json(const Persona& persona) {
  json doc = json::object();
  for (Attribute a : kAllAttributes) {
    if (auto c = persona.category(a)) {
      doc[std::string(attribute_key(a))] = category_labels(a)[static_cast<size_t>(*c)];
    }
  }
  return doc;
}

Persona persona_from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("persona must be a JSON object");
  Persona p;
  int advanced = 0;
  for (Attribute a : kFoundationalAttributes) {
    const auto key = std::string(attribute_key(a));
    if (!doc.contains(key)) throw ParseError(fmt::format("persona missing '{}'", key));
    p.set_category(a, category_from_label(a, doc[key].get<std::string>()));
  }
  for (Attribute a : kAdvancedAttributes) {
    const auto key = std::string(attribute_key(a));
    if (!doc.contains(key)) continue;
    p.set_category(a, category_from_label(a, doc[key].get<std::string>()));
    ++advanced;
  }
  if (advanced != 0 && advanced != 5) throw ParseError("persona advanced attributes partially filled");
  return p;
}

}  // namespace riskprobe
