// SPDX-License-Identifier: Apache-2.0
#include "learn/data/io.hpp"

#include <fmt/format.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace learn::data {
namespace {

using json = nlohmann::ordered_json;

std::string format_real(double v) { return fmt::format("{:.17g}", v); }

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_real(const std::string& field, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != field.size()) throw DatasetFormatError(where + ": not a number: '" + field + "'");
  return v;
}

json tensor_json(const Tensor& t) {
  json j;
  j["rows"] = t.empty() ? 0 : t.rows();
  j["cols"] = t.empty() ? 0 : t.cols();
  j["data"] = std::vector<double>(t.data().begin(), t.data().end());
  return j;
}

Tensor tensor_from(const json& j) {
  const auto rows = j.at("rows").get<std::size_t>(), cols = j.at("cols").get<std::size_t>();
  auto data = j.at("data").get<std::vector<double>>();
  if (rows * cols == 0) return {};
  if (data.size() != rows * cols) throw DatasetFormatError("oracle file: tensor size mismatch");
  return Tensor({rows, cols}, std::move(data));
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::filesystem::path oracle_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".oracle";
  return p;
}

void write_public_csv(std::ostream& out, const PublicView& view) {
  const std::size_t p = view.covariate_dim(), t0 = view.horizon();
  out << "group:str,a:f64";
  for (std::size_t j = 1; j <= p; ++j) out << ",x_" << j << ":f64";
  for (std::size_t t = 1; t <= t0; ++t) out << ",s_" << t << ":f64";
  if (view.has_long_term()) out << ",y:f64";
  out << '\n';
  const char g = group_code(view.group);
  for (std::size_t i = 0; i < view.size(); ++i) {
    out << g << ',' << format_real(view.treatment[i]);
    for (std::size_t j = 0; j < p; ++j) out << ',' << format_real(view.covariates.at(i, j));
    for (std::size_t t = 0; t < t0; ++t) out << ',' << format_real(view.short_term.at(i, t));
    if (view.has_long_term()) out << ',' << format_real(view.long_term[i]);
    out << '\n';
  }
}

PublicView read_public_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DatasetFormatError(source + ": empty file");
  const auto header = split_commas(line);
  if (header.size() < 2 || header[0] != "group:str" || header[1] != "a:f64") {
    throw DatasetFormatError(source + ": header must start with group:str,a:f64");
  }
  std::size_t p = 0, t0 = 0;
  bool has_y = false;
  for (std::size_t c = 2; c < header.size(); ++c) {
    const auto& h = header[c];
    if (h == fmt::format("x_{}:f64", p + 1) && t0 == 0 && !has_y) {
      ++p;
    } else if (h == fmt::format("s_{}:f64", t0 + 1) && !has_y) {
      ++t0;
    } else if (h == "y:f64" && !has_y && c + 1 == header.size()) {
      has_y = true;
    } else {
      throw DatasetFormatError(source + ": unexpected header column '" + h + "'");
    }
  }

  PublicView view;
  std::vector<double> x, s;
  std::size_t line_no = 1;
  bool group_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto fields = split_commas(line);
    if (fields.size() != header.size()) {
      throw DatasetFormatError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                               std::to_string(fields.size()));
    }
    Group g;
    if (fields[0] == "o") {
      g = Group::Observational;
    } else if (fields[0] == "e") {
      g = Group::Experimental;
    } else {
      throw DatasetFormatError(where + ": group must be 'o' or 'e'");
    }
    if (group_seen && g != view.group) throw DatasetFormatError(where + ": mixed groups in one file");
    view.group = g;
    group_seen = true;
    view.treatment.push_back(parse_real(fields[1], where));
    for (std::size_t j = 0; j < p; ++j) x.push_back(parse_real(fields[2 + j], where));
    for (std::size_t t = 0; t < t0; ++t) s.push_back(parse_real(fields[2 + p + t], where));
    if (has_y) view.long_term.push_back(parse_real(fields.back(), where));
  }
  const std::size_t n = view.treatment.size();
  if (n == 0) throw DatasetFormatError(source + ": no rows");
  if ((view.group == Group::Observational) != has_y) {
    throw DatasetFormatError(source + ": y column must be present exactly for observational data");
  }
  view.covariates = Tensor({n, p}, std::move(x));
  view.short_term = Tensor({n, t0}, std::move(s));
  return view;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ostringstream csv;
  write_public_csv(csv, data.view());
  write_file_atomic(path, csv.str());
  if (!data.has_oracle()) return;
  const OracleData& o = data.oracle_for_io();
  json j;
  j["unobserved"] = tensor_json(o.unobserved);
  j["hidden_long_term"] = o.hidden_long_term;
  j["grid"] = o.grid;
  j["long_term_curves"] = tensor_json(o.long_term_curves);
  j["reference_treatment"] = o.reference_treatment;
  j["reference_short_term"] = tensor_json(o.reference_short_term);
  j["reference_long_term"] = o.reference_long_term;
  write_file_atomic(oracle_path(path), j.dump() + "\n");
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset file not found: " + path.string());
  PublicView view = read_public_csv(in, path.string());
  OracleData oracle;
  if (std::ifstream oin(oracle_path(path)); oin) {
    json j;
    try {
      j = json::parse(oin);
      oracle.unobserved = tensor_from(j.at("unobserved"));
      oracle.hidden_long_term = j.at("hidden_long_term").get<std::vector<double>>();
      oracle.grid = j.at("grid").get<std::vector<double>>();
      oracle.long_term_curves = tensor_from(j.at("long_term_curves"));
      oracle.reference_treatment = j.at("reference_treatment").get<double>();
      oracle.reference_short_term = tensor_from(j.at("reference_short_term"));
      oracle.reference_long_term = j.at("reference_long_term").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw DatasetFormatError(oracle_path(path).string() + ": " + e.what());
    }
  }
  return Dataset(std::move(view), std::move(oracle));
}

}  // namespace learn::data
