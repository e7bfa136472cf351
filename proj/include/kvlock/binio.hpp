#pragma once

// Little-endian binary file helpers shared by the container formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "kvlock/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace kvlock::binio {

class Writer {
public:
    explicit Writer(const std::filesystem::path& path)
        : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw ConfigError("cannot open for write: " + path.string());
    }

    void magic(const char (&m)[9]) { raw(m, 8); }
    void u32(uint32_t x) { raw(&x, sizeof(x)); }
    void u64(uint64_t x) { raw(&x, sizeof(x)); }
    void f32(float x) { raw(&x, sizeof(x)); }
    void f32s(const float* p, std::size_t n) { raw(p, n * sizeof(float)); }
    void f32s(const double* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) f32(static_cast<float>(p[i]));
    }
    void bytes(const uint8_t* p, std::size_t n) { raw(p, n); }

    void close() {
        out_.close();
        if (!out_) throw ConfigError("write failed: " + path_.string());
    }

private:
    void raw(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    std::filesystem::path path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path) {
        if (!std::filesystem::exists(path)) {
            throw ConfigError("file not found: " + path.string());
        }
        in_.open(path, std::ios::binary);
        if (!in_) throw ConfigError("cannot open: " + path.string());
    }

    void expect_magic(const char (&m)[9]) {
        char got[8];
        raw(got, 8);
        if (std::memcmp(got, m, 8) != 0) {
            throw IntegrityError("bad magic in " + path_.string() + " (expected " +
                                 std::string(m, 8) + ")");
        }
    }
    uint32_t u32() { uint32_t x; raw(&x, sizeof(x)); return x; }
    uint64_t u64() { uint64_t x; raw(&x, sizeof(x)); return x; }
    float f32() { float x; raw(&x, sizeof(x)); return x; }
    void f32s(float* p, std::size_t n) { raw(p, n * sizeof(float)); }
    void f32s(double* p, std::size_t n) {
        std::vector<float> tmp(n);
        raw(tmp.data(), n * sizeof(float));
        for (std::size_t i = 0; i < n; ++i) p[i] = tmp[i];
    }
    void bytes(uint8_t* p, std::size_t n) { raw(p, n); }

    void expect_eof() {
        char c;
        in_.read(&c, 1);
        if (!in_.eof()) throw IntegrityError("trailing bytes in " + path_.string());
    }

private:
    void raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw IntegrityError("truncated file: " + path_.string());
        }
    }
    std::filesystem::path path_;
    std::ifstream in_;
};

} // namespace kvlock::binio
