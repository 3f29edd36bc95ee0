#ifndef PHYSREC_SRC_JSON_UTIL_HPP
#define PHYSREC_SRC_JSON_UTIL_HPP

#include <json.hpp>

#include "physrec/neuralmr.hpp"

namespace physrec::jsonio {

using json = nlohmann::json;

json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const json& j, const std::string& path);

json to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const json& j, const std::string& path);

}  // namespace physrec::jsonio

#endif  // PHYSREC_SRC_JSON_UTIL_HPP
