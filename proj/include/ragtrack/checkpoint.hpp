// Self-contained binary checkpoints: the JSON-serialized configuration
// followed by every named tensor in registration order.

#pragma once

#include <string>

#include "ragtrack/model.hpp"

namespace ragtrack {

void save_checkpoint(const std::string& path, const RagTrackModel& model);

// Reads the embedded configuration so the caller can construct a matching
// model before loading weights.
TrackerConfig checkpoint_config(const std::string& path);

// Loads weights into an already-constructed model; every stored tensor must
// match the model's registry by name and shape.
void load_checkpoint(const std::string& path, RagTrackModel& model);

}  // namespace ragtrack
