#pragma once

#include "json.hpp"

#include "ddcal/data.hpp"
#include "ddcal/mask.hpp"
#include "ddcal/nets.hpp"

namespace ddcal {

using json = nlohmann::json;

void to_json(json& j, const NetSpec& s);
void from_json(const json& j, NetSpec& s);
void to_json(json& j, const LossSpec& s);
void from_json(const json& j, LossSpec& s);
void to_json(json& j, const TrainConfig& c);
void from_json(const json& j, TrainConfig& c);
void to_json(json& j, const BlobSpec& s);
void from_json(const json& j, BlobSpec& s);
void to_json(json& j, const MaskSpec& m);
void from_json(const json& j, MaskSpec& m);

}  // namespace ddcal
