#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "confoundnet/data.hpp"
#include "confoundnet/network.hpp"
#include "confoundnet/trainer.hpp"

namespace confoundnet {

using Json = nlohmann::json;

/// Throws ConfigError if `object` is not an object or holds a key outside
/// `allowed`. `where` prefixes the message.
void require_known_keys(const Json& object, std::initializer_list<std::string_view> allowed,
                        std::string_view where);

// Readers start from the defaults, override whatever keys are present and
// reject unknown keys. Writers emit every field.

Json to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const Json& j);

Json to_json(const HyperParams& hp);
HyperParams hyper_params_from_json(const Json& j);

Json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const Json& j);

Json to_json(const Metrics& metrics);
Metrics metrics_from_json(const Json& j);

}  // namespace confoundnet
