#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include <unistd.h>

namespace modurec::testing {

/// Scratch directory removed at scope exit.
class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("modurec_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string write(const std::string& name, const std::string& content) const {
        const auto p = path_ / name;
        std::ofstream(p, std::ios::binary) << content;
        return p.string();
    }
    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::string ml100k_dir() {
#ifdef MODUREC_DATA_DIR
    return MODUREC_DATA_DIR;
#else
    return "data/ml-100k";
#endif
}

inline bool have_ml100k() { return std::filesystem::exists(ml100k_dir() + "/u.data"); }

#define MODUREC_REQUIRE_ML100K()                                                   \
    do {                                                                           \
        if (!::modurec::testing::have_ml100k()) GTEST_SKIP() << "ML-100K not found"; \
    } while (0)

}  // namespace modurec::testing
