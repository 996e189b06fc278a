#include "thzce/binary_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace thzce {

namespace {

void to_little(char *bytes)
{
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(bytes, bytes + 8);
}

} // namespace

void write_f64_blob(const std::filesystem::path &path, std::span<const double> values)
{
    std::vector<char> buf(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i)
    {
        std::memcpy(buf.data() + 8 * i, &values[i], 8);
        to_little(buf.data() + 8 * i);
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os)
        throw std::runtime_error("write failed: " + path.string());
}

std::vector<double> read_f64_blob(const std::filesystem::path &path)
{
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is)
        throw std::runtime_error("cannot open " + path.string());
    auto bytes = static_cast<std::size_t>(is.tellg());
    if (bytes % 8 != 0)
        throw std::runtime_error(path.string() + ": length is not a multiple of 8 bytes");
    is.seekg(0);
    std::vector<char> buf(bytes);
    is.read(buf.data(), static_cast<std::streamsize>(bytes));
    if (!is)
        throw std::runtime_error("read failed: " + path.string());
    std::vector<double> values(bytes / 8);
    for (std::size_t i = 0; i < values.size(); ++i)
    {
        to_little(buf.data() + 8 * i);
        std::memcpy(&values[i], buf.data() + 8 * i, 8);
    }
    return values;
}

} // namespace thzce
