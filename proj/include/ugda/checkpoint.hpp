#pragma once

#include <ostream>
#include <string>

#include "ugda/metalearn.hpp"

namespace ugda {

// ============================================================================
// Checkpoint format: a human-readable text manifest (version line, config
// hash, iteration, RNG/optimizer/stream/domain descriptions) followed by raw
// little-endian double blobs for every parameter array, closed by an FNV-64
// trailer over the payload.  Loads verify the trailer, the version line and
// the config hash; any size mismatch names the offending array.
// ============================================================================

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const MetaState& st, const std::string& path);

// Rebuilds the state for cfg from the file.  A config-hash mismatch is an
// error unless force is set (then a note goes to warn).  Truncation or
// corruption raises NumericError; an unsupported version asks for migration.
MetaState load_checkpoint(const RunConfig& cfg, const std::string& path, bool force = false,
                          std::ostream* warn = nullptr);

} // namespace ugda
