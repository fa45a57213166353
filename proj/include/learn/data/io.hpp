// SPDX-License-Identifier: Apache-2.0
//
// Dataset files are comma-separated with a typed header:
//   group:str,a:f64,x_1:f64,...,x_p:f64,s_1:f64,...,s_t0:f64[,y:f64]
// The y column exists only for observational data. Oracle data goes to a
// sibling JSON file named <path>.oracle.
#pragma once

#include <filesystem>
#include <iosfwd>

#include "learn/data/dataset.hpp"

namespace learn::data {

class DatasetFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_public_csv(std::ostream& out, const PublicView& view);
PublicView read_public_csv(std::istream& in, const std::string& source = "<stream>");

/// Writes `path` and, when the dataset carries oracle data, `path.oracle`.
/// Both writes go through a temporary file and a rename.
void write_dataset(const std::filesystem::path& path, const Dataset& data);

/// Reads `path` and `path.oracle` if present.
Dataset read_dataset(const std::filesystem::path& path);

std::filesystem::path oracle_path(const std::filesystem::path& path);

/// Writes `<path>.tmp` and renames it over `path`; creates parent directories.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace learn::data
