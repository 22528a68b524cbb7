#pragma once

#include <stdexcept>
#include <string>

namespace layersim {

// Invalid scenario setup (bad preset, infeasible memory, malformed file).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Internal inconsistency or an unrecoverable runtime condition (stuck
// simulation, double release, accounting violation).
struct SimulationError : std::runtime_error {
  explicit SimulationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace layersim
