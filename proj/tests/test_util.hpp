#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace test_util {

// Tests run with the repository root as working directory (set by ctest).
inline std::string repo_path(const std::string& rel) { return rel; }

inline std::string write_temp(const std::string& name, const std::string& content) {
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "fairpipe_tests";
  std::filesystem::create_directories(dir);
  std::filesystem::path file = dir / name;
  std::ofstream out(file);
  out << content;
  return file.string();
}

inline std::string temp_dir(const std::string& name) {
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "fairpipe_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace test_util
