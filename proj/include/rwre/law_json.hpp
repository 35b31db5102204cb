#pragma once

#include "json.hpp"
#include "rwre/law.hpp"

namespace rwre {

inline nlohmann::json law_to_json(const OffspringLaw& law) {
  nlohmann::json j;
  if (law.kind == OffspringLaw::Kind::LogNormal) {
    j["type"] = "log_normal";
    j["n_children"] = law.n_children;
    j["mu"] = law.mu;
    j["s2"] = law.s2;
  } else {
    j["type"] = "discrete_table";
    nlohmann::json atoms = nlohmann::json::array();
    for (auto& at : law.atoms)
      atoms.push_back({{"prob", at.prob}, {"a", at.a}});
    j["atoms"] = atoms;
  }
  return j;
}

inline OffspringLaw law_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "log_normal") {
    return OffspringLaw::log_normal(j.at("n_children").get<int>(),
                                    j.at("mu").get<double>(),
                                    j.at("s2").get<double>());
  }
  if (type == "discrete_table") {
    std::vector<DiscreteAtom> atoms;
    for (auto& aj : j.at("atoms")) {
      DiscreteAtom at;
      at.prob = aj.at("prob").get<double>();
      at.a = aj.at("a").get<std::vector<double>>();
      at.n = static_cast<int>(at.a.size());
      atoms.push_back(std::move(at));
    }
    return OffspringLaw::discrete(std::move(atoms));
  }
  throw std::invalid_argument("unknown law type: " + type);
}

}  // namespace rwre
