#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ddcal/tensor.hpp"

namespace ddcal {

struct NamedTensor {
    std::string name;
    Tensor value;
};

/// Named-tensor file, little-endian:
///
///   "DDCALNT1"                       8-byte magic
///   u64 header_len, header bytes     structured-text metadata (JSON), may be empty
///   u64 count
///   count x { u64 name_len, name bytes, u64 rank, rank x u64 dims, f64 values }
///
/// Written through a temporary file and renamed into place.
void save_named_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                        const std::string& header = {});

struct NamedTensorFile {
    std::string header;
    std::vector<NamedTensor> tensors;
};

NamedTensorFile load_named_tensors(const std::filesystem::path& path);

/// Writes `contents` to `path` via temp file + rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace ddcal
