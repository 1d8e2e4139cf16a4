#include "metamask/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "metamask/errors.hpp"

namespace metamask::io {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'T', '1'};

template <typename T>
void put_le(std::vector<unsigned char>& out, T value)
{
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xffu));
    }
}

template <typename T>
T get_le(const unsigned char* p)
{
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
    return std::bit_cast<T>(bits);
}

}  // namespace

std::vector<unsigned char> encode_mmt1(const Tensor& t)
{
    std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
    out.reserve(8 + 4 * t.rank() + 8 * t.size());
    put_le(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le(out, static_cast<std::uint32_t>(e));
    for (double v : t.data()) put_le(out, v);
    return out;
}

Tensor decode_mmt1(const std::vector<unsigned char>& bytes, const std::string& origin)
{
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw ParseError(origin + ": bad magic, not an MMT1 file");
    }
    const auto rank = get_le<std::uint32_t>(bytes.data() + 4);
    const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank);
    if (bytes.size() < header) {
        throw ParseError(origin + ": truncated header (rank " + std::to_string(rank) + ")");
    }
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) shape[i] = get_le<std::uint32_t>(bytes.data() + 8 + 4 * i);
    const std::size_t n = shape_size(shape);
    if (bytes.size() != header + 8 * n) {
        throw ParseError(origin + ": payload holds " + std::to_string(bytes.size() - header) +
                         " bytes, shape " + to_string(shape) + " needs " +
                         std::to_string(8 * n));
    }
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = get_le<double>(bytes.data() + header + 8 * i);
    return Tensor(std::move(shape), std::move(data));
}

void write_mmt1(const std::filesystem::path& path, const Tensor& t)
{
    const auto bytes = encode_mmt1(t);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + path.string());
}

Tensor read_mmt1(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_mmt1(bytes, path.string());
}

}  // namespace metamask::io
