#pragma once

#include "mine/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace mine::io {

inline constexpr int kSchemaVersion = 1;

// 17 significant digits: lossless round-trip for f64.
std::string format_double(double x);

struct CsvTable {
  std::vector<std::string> header;
  RowMatrix values;
};

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const RowMatrix& values);
CsvTable read_csv(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

nlohmann::json to_json(const RowMatrix& m);
RowMatrix matrix_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);

}  // namespace mine::io
