#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "ufm/ufm.hpp"

namespace testing_support {

inline std::filesystem::path source_dir() { return UFM_SOURCE_DIR; }
inline std::filesystem::path room_scene() { return source_dir() / "data" / "scenes" / "room.scene"; }

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "ufm_" + tag;
    if (info) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline ufm::Mat3 random_spd(std::mt19937_64& rng, double scale = 0.3, double floor = 0.01) {
  std::normal_distribution<double> n01;
  ufm::Mat3 a;
  for (int i = 0; i < 9; ++i) a(i) = scale * n01(rng);
  return a * a.transpose() + floor * ufm::Mat3::Identity();
}

inline ufm::Vec3 random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n01;
  return {scale * n01(rng), scale * n01(rng), scale * n01(rng)};
}

inline ufm::Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Eigen::Quaterniond q(n01(rng), n01(rng), n01(rng), n01(rng));
  return q.normalized().toRotationMatrix();
}

inline ufm::Gaussian3 random_gaussian(std::mt19937_64& rng, double spread = 1.0) {
  return ufm::Gaussian3::make(random_vec(rng, spread), random_spd(rng));
}

inline ufm::CameraIntrinsics small_camera() { return {100.0, 100.0, 32.0, 24.0, 64, 48}; }

}  // namespace testing_support
