#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stconv/model.hpp"
#include "stconv/stip.hpp"

// STCV checkpoints and codebook documents.

namespace stconv {

inline constexpr std::uint32_t kStcvVersion = 1;

struct Checkpoint {
  HybridModel model;  // Adam state is not stored; a loaded model starts at step 0
  StipParams stip;
};

std::string config_to_json(const HybridConfig& model, const StipParams& stip);
/// Throws FormatError(kSyntax) on malformed or incomplete documents.
void config_from_json(std::string_view text, HybridConfig& model, StipParams& stip);

/// "STCV", version u32, JSON length u32, JSON config, tensor count u32, then
/// per parameter: five u64 extents and the little-endian doubles; CRC32 last.
std::vector<std::uint8_t> encode_checkpoint(const HybridModel& m, const StipParams& stip);
/// Validates magic, version, length, CRC and every shape against the config.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const HybridModel& m, const StipParams& stip);
Checkpoint load_checkpoint(const std::string& path);

/// {"k": K, "width": D, "centers": [[...], ...]} with round-trip doubles.
std::string codebook_to_json(const Codebook& cb);
Codebook codebook_from_json(std::string_view text);
void save_codebook(const std::string& path, const Codebook& cb);
Codebook load_codebook(const std::string& path);

}  // namespace stconv
