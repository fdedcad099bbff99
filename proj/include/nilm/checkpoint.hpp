#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "nilm/model.hpp"

namespace nilm {

// Checkpoint container: a text manifest followed by a little-endian blob.
//
//   NILMCKPT 1
//   meta <key> <value>
//   tensor <name> <f64|f32> <byte offset into blob> <d0>x<d1>x...
//   end
//   <blob>
//
// Model architecture is stored as meta entries; extra caller metadata (for
// instance a config hash) is carried alongside.
struct Checkpoint {
    NilmModel model;
    std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::filesystem::path& path, const NilmModel& model,
                     const std::map<std::string, std::string>& extra_meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nilm
