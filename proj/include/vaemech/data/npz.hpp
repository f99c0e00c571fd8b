#pragma once

// Reader for .npz archives: a zip container (stored or deflated entries,
// zip64 aware) holding .npy array records.

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vaemech/core/error.hpp"
#include "vaemech/core/tensor.hpp"

namespace vaemech {

namespace detail {

inline std::uint64_t le(const std::uint8_t* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace detail

struct ZipEntry {
    std::string name;
    std::uint16_t method = 0;
    std::uint32_t crc = 0;
    std::uint64_t compressed = 0;
    std::uint64_t size = 0;
    std::uint64_t header_offset = 0;
};

class ZipReader {
public:
    using Sink = std::function<void(std::span<const std::uint8_t>)>;

    explicit ZipReader(std::string path) : path_(std::move(path)) {
        std::ifstream in(path_, std::ios::binary);
        if (!in) throw FormatError("cannot open archive '" + path_ + "'");
        in.seekg(0, std::ios::end);
        file_size_ = static_cast<std::uint64_t>(in.tellg());
        read_directory(in);
    }

    const std::string& path() const noexcept { return path_; }
    const std::vector<ZipEntry>& entries() const noexcept { return entries_; }

    const ZipEntry* find(std::string_view name) const {
        for (const auto& e : entries_) {
            if (e.name == name) return &e;
        }
        return nullptr;
    }

    /// Feed the uncompressed bytes of an entry to `sink` in chunks. With a
    /// nonzero `limit`, stops once at least that many bytes were delivered
    /// (the CRC is then not checked).
    void stream(const ZipEntry& e, const Sink& sink, std::uint64_t limit = 0) const {
        std::ifstream in(path_, std::ios::binary);
        const std::uint64_t data = data_offset(in, e);
        if (data + e.compressed > file_size_) fail(e, "payload is truncated");
        in.seekg(static_cast<std::streamoff>(data));

        constexpr std::size_t kChunk = 1 << 20;
        std::vector<std::uint8_t> src(kChunk), dst(kChunk);
        std::uint64_t remaining = e.compressed, delivered = 0;
        uLong crc = crc32(0L, Z_NULL, 0);
        const bool full = limit == 0;

        if (e.method == 0) {
            if (e.compressed != e.size) fail(e, "stored entry has mismatched sizes");
            while (remaining > 0 && (full || delivered < limit)) {
                const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, kChunk));
                if (!in.read(reinterpret_cast<char*>(src.data()), static_cast<std::streamsize>(n))) {
                    fail(e, "payload is truncated");
                }
                crc = crc32(crc, src.data(), static_cast<uInt>(n));
                sink({src.data(), n});
                remaining -= n;
                delivered += n;
            }
        } else if (e.method == 8) {
            z_stream zs{};
            if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) fail(e, "inflate initialisation failed");
            int rc = Z_OK;
            try {
                while (rc != Z_STREAM_END && (full || delivered < limit)) {
                    if (zs.avail_in == 0) {
                        if (remaining == 0) fail(e, "deflate stream ends early");
                        const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, kChunk));
                        if (!in.read(reinterpret_cast<char*>(src.data()), static_cast<std::streamsize>(n))) {
                            fail(e, "payload is truncated");
                        }
                        remaining -= n;
                        zs.next_in = src.data();
                        zs.avail_in = static_cast<uInt>(n);
                    }
                    zs.next_out = dst.data();
                    zs.avail_out = static_cast<uInt>(dst.size());
                    rc = inflate(&zs, Z_NO_FLUSH);
                    if (rc != Z_OK && rc != Z_STREAM_END) fail(e, "corrupt deflate data");
                    const std::size_t got = dst.size() - zs.avail_out;
                    if (got > 0) {
                        crc = crc32(crc, dst.data(), static_cast<uInt>(got));
                        sink({dst.data(), got});
                        delivered += got;
                    }
                }
            } catch (...) {
                inflateEnd(&zs);
                throw;
            }
            inflateEnd(&zs);
        } else {
            fail(e, "unsupported compression method " + std::to_string(e.method));
        }
        if (full) {
            if (delivered != e.size) fail(e, "uncompressed size does not match the directory");
            if (crc != e.crc) fail(e, "CRC mismatch");
        }
    }

    std::vector<std::uint8_t> read(const ZipEntry& e) const {
        std::vector<std::uint8_t> out;
        out.reserve(static_cast<std::size_t>(e.size));
        stream(e, [&](std::span<const std::uint8_t> c) { out.insert(out.end(), c.begin(), c.end()); });
        return out;
    }

private:
    [[noreturn]] void fail(const ZipEntry& e, const std::string& what) const {
        throw FormatError("archive '" + path_ + "' entry '" + e.name + "': " + what);
    }
    [[noreturn]] void fail(const std::string& what) const { throw FormatError("archive '" + path_ + "': " + what); }

    std::vector<std::uint8_t> read_at(std::ifstream& in, std::uint64_t offset, std::size_t n) const {
        if (offset + n > file_size_) fail("unexpected end of file");
        std::vector<std::uint8_t> buf(n);
        in.clear();
        in.seekg(static_cast<std::streamoff>(offset));
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n))) {
            fail("unexpected end of file");
        }
        return buf;
    }

    std::uint64_t data_offset(std::ifstream& in, const ZipEntry& e) const {
        const auto h = read_at(in, e.header_offset, 30);
        if (detail::le(h.data(), 4) != 0x04034b50) fail(e, "bad local header signature");
        return e.header_offset + 30 + detail::le(h.data() + 26, 2) + detail::le(h.data() + 28, 2);
    }

    void read_directory(std::ifstream& in) {
        if (file_size_ < 22) fail("too small to be a zip archive");
        const std::size_t tail = static_cast<std::size_t>(std::min<std::uint64_t>(file_size_, 22 + 65535));
        const auto buf = read_at(in, file_size_ - tail, tail);
        std::size_t pos = std::string::npos;
        for (std::size_t i = tail - 22 + 1; i-- > 0;) {
            if (detail::le(buf.data() + i, 4) == 0x06054b50) {
                pos = i;
                break;
            }
        }
        if (pos == std::string::npos) fail("end-of-central-directory record not found");
        const std::uint8_t* eocd = buf.data() + pos;
        std::uint64_t count = detail::le(eocd + 10, 2);
        std::uint64_t dir_size = detail::le(eocd + 12, 4);
        std::uint64_t dir_offset = detail::le(eocd + 16, 4);

        const std::uint64_t eocd_abs = file_size_ - tail + pos;
        if ((count == 0xFFFF || dir_size == 0xFFFFFFFF || dir_offset == 0xFFFFFFFF) && eocd_abs >= 20) {
            const auto loc = read_at(in, eocd_abs - 20, 20);
            if (detail::le(loc.data(), 4) == 0x07064b50) {
                const auto z64 = read_at(in, detail::le(loc.data() + 8, 8), 56);
                if (detail::le(z64.data(), 4) != 0x06064b50) fail("bad zip64 end-of-central-directory record");
                count = detail::le(z64.data() + 32, 8);
                dir_size = detail::le(z64.data() + 40, 8);
                dir_offset = detail::le(z64.data() + 48, 8);
            }
        }
        if (dir_offset + dir_size > file_size_) fail("central directory lies outside the file");
        const auto dir = read_at(in, dir_offset, static_cast<std::size_t>(dir_size));
        std::size_t p = 0;
        for (std::uint64_t i = 0; i < count; ++i) {
            if (p + 46 > dir.size() || detail::le(dir.data() + p, 4) != 0x02014b50) {
                fail("corrupt central directory entry " + std::to_string(i));
            }
            const std::uint8_t* h = dir.data() + p;
            ZipEntry e;
            e.method = static_cast<std::uint16_t>(detail::le(h + 10, 2));
            e.crc = static_cast<std::uint32_t>(detail::le(h + 16, 4));
            e.compressed = detail::le(h + 20, 4);
            e.size = detail::le(h + 24, 4);
            const std::size_t name_len = detail::le(h + 28, 2);
            const std::size_t extra_len = detail::le(h + 30, 2);
            const std::size_t comment_len = detail::le(h + 32, 2);
            e.header_offset = detail::le(h + 42, 4);
            if (p + 46 + name_len + extra_len + comment_len > dir.size()) fail("central directory is truncated");
            e.name.assign(reinterpret_cast<const char*>(h + 46), name_len);

            // zip64 extended information: present fields appear in a fixed order.
            const std::uint8_t* x = h + 46 + name_len;
            for (std::size_t q = 0; q + 4 <= extra_len;) {
                const std::uint64_t id = detail::le(x + q, 2);
                const std::size_t len = detail::le(x + q + 2, 2);
                if (q + 4 + len > extra_len) break;
                if (id == 0x0001) {
                    const std::uint8_t* f = x + q + 4;
                    std::size_t used = 0;
                    auto take = [&](std::uint64_t& field) {
                        if (used + 8 <= len) {
                            field = detail::le(f + used, 8);
                            used += 8;
                        }
                    };
                    if (e.size == 0xFFFFFFFF) take(e.size);
                    if (e.compressed == 0xFFFFFFFF) take(e.compressed);
                    if (e.header_offset == 0xFFFFFFFF) take(e.header_offset);
                }
                q += 4 + len;
            }
            entries_.push_back(std::move(e));
            p += 46 + name_len + extra_len + comment_len;
        }
    }

    std::string path_;
    std::uint64_t file_size_ = 0;
    std::vector<ZipEntry> entries_;
};

/// Parsed .npy record header.
struct NpyHeader {
    std::string descr;
    bool fortran_order = false;
    Shape shape;
    std::size_t header_bytes = 0;  // magic + length field + dict

    std::size_t numel() const { return shape_numel(shape); }
    std::size_t item_size() const {
        const auto digits = descr.find_first_of("0123456789");
        if (digits == std::string::npos) return 0;
        return static_cast<std::size_t>(std::stoul(descr.substr(digits)));
    }
};

/// Parse the header at the start of an .npy record. Returns false if more
/// bytes are needed.
inline bool parse_npy_header(std::span<const std::uint8_t> bytes, const std::string& what, NpyHeader& out) {
    if (bytes.size() < 10) return false;
    static constexpr std::uint8_t magic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
    if (std::memcmp(bytes.data(), magic, 6) != 0) throw FormatError(what + ": not an .npy record (bad magic)");
    const int major = bytes[6];
    std::size_t len = 0, start = 0;
    if (major == 1) {
        len = detail::le(bytes.data() + 8, 2);
        start = 10;
    } else if (major == 2 || major == 3) {
        if (bytes.size() < 12) return false;
        len = detail::le(bytes.data() + 8, 4);
        start = 12;
    } else {
        throw FormatError(what + ": unsupported .npy version " + std::to_string(major));
    }
    if (bytes.size() < start + len) return false;
    const std::string dict(reinterpret_cast<const char*>(bytes.data() + start), len);
    out.header_bytes = start + len;

    auto value_of = [&](const std::string& key) -> std::string {
        const auto k = dict.find("'" + key + "'");
        if (k == std::string::npos) throw FormatError(what + ": header lacks '" + key + "'");
        const auto colon = dict.find(':', k);
        if (colon == std::string::npos) throw FormatError(what + ": malformed header");
        return dict.substr(colon + 1);
    };
    {
        const std::string v = value_of("descr");
        const auto q0 = v.find('\'');
        const auto q1 = q0 == std::string::npos ? q0 : v.find('\'', q0 + 1);
        if (q1 == std::string::npos) throw FormatError(what + ": malformed descr");
        out.descr = v.substr(q0 + 1, q1 - q0 - 1);
    }
    {
        const std::string v = value_of("fortran_order");
        const auto t = v.find_first_not_of(' ');
        out.fortran_order = v.compare(t, 4, "True") == 0;
    }
    {
        const std::string v = value_of("shape");
        const auto open = v.find('(');
        const auto close = v.find(')');
        if (open == std::string::npos || close == std::string::npos || close < open) {
            throw FormatError(what + ": malformed shape");
        }
        out.shape.clear();
        std::string num;
        for (std::size_t i = open + 1; i <= close; ++i) {
            const char c = v[i];
            if (c >= '0' && c <= '9') {
                num += c;
            } else if (c == ',' || c == ')') {
                if (!num.empty()) out.shape.push_back(static_cast<std::size_t>(std::stoull(num)));
                num.clear();
            } else if (c != ' ' && c != 'L') {
                throw FormatError(what + ": malformed shape");
            }
        }
    }
    if (out.fortran_order) throw FormatError(what + ": Fortran-ordered arrays are not supported");
    return true;
}

/// Access to the named arrays of an .npz archive.
class NpzReader {
public:
    explicit NpzReader(std::string path) : zip_(std::move(path)) {}

    const ZipReader& zip() const noexcept { return zip_; }

    bool has(std::string_view name) const { return find(name) != nullptr; }

    /// Header only; reads just the start of the record.
    NpyHeader header(std::string_view name) const {
        const ZipEntry& e = require(name);
        std::vector<std::uint8_t> head;
        NpyHeader h;
        bool done = false;
        zip_.stream(e,
                    [&](std::span<const std::uint8_t> c) {
                        if (done) return;
                        head.insert(head.end(), c.begin(), c.end());
                        done = parse_npy_header(head, label(name), h);
                    },
                    64 * 1024);
        if (!done) throw FormatError(label(name) + ": truncated .npy header");
        check_payload(name, h, e.size);
        return h;
    }

    /// Stream the payload bytes of a record after validating its header.
    void stream(std::string_view name, const std::function<void(const NpyHeader&)>& on_header,
                const ZipReader::Sink& sink) const {
        const ZipEntry& e = require(name);
        std::vector<std::uint8_t> head;
        NpyHeader h;
        bool parsed = false;
        zip_.stream(e, [&](std::span<const std::uint8_t> c) {
            if (parsed) {
                sink(c);
                return;
            }
            head.insert(head.end(), c.begin(), c.end());
            if (!parse_npy_header(head, label(name), h)) return;
            parsed = true;
            check_payload(name, h, e.size);
            on_header(h);
            if (head.size() > h.header_bytes) sink(std::span<const std::uint8_t>(head).subspan(h.header_bytes));
            head.clear();
        });
        if (!parsed) throw FormatError(label(name) + ": truncated .npy header");
    }

    /// Float64 record ('<f8').
    std::vector<double> read_f64(std::string_view name, NpyHeader* header_out = nullptr) const {
        return read_as<double>(name, "<f8", header_out);
    }

    /// Int64 record ('<i8').
    std::vector<std::int64_t> read_i64(std::string_view name, NpyHeader* header_out = nullptr) const {
        return read_as<std::int64_t>(name, "<i8", header_out);
    }

private:
    const ZipEntry* find(std::string_view name) const {
        if (const ZipEntry* e = zip_.find(std::string(name) + ".npy")) return e;
        return zip_.find(name);
    }

    const ZipEntry& require(std::string_view name) const {
        const ZipEntry* e = find(name);
        if (!e) throw FormatError("archive '" + zip_.path() + "' has no entry '" + std::string(name) + "'");
        return *e;
    }

    std::string label(std::string_view name) const {
        return "archive '" + zip_.path() + "' record '" + std::string(name) + "'";
    }

    void check_payload(std::string_view name, const NpyHeader& h, std::uint64_t entry_size) const {
        const std::size_t item = h.item_size();
        if (item == 0) throw FormatError(label(name) + ": unsupported dtype '" + h.descr + "'");
        const std::uint64_t expect = h.header_bytes + static_cast<std::uint64_t>(h.numel()) * item;
        if (expect != entry_size) {
            throw FormatError(label(name) + ": shape " + shape_str(h.shape) + " of dtype '" + h.descr + "' needs " +
                              std::to_string(expect - h.header_bytes) + " payload bytes, record holds " +
                              std::to_string(entry_size >= h.header_bytes ? entry_size - h.header_bytes : 0));
        }
    }

    template <class T>
    std::vector<T> read_as(std::string_view name, std::string_view dtype, NpyHeader* header_out) const {
        std::vector<T> out;
        std::vector<std::uint8_t> bytes;
        stream(
            name,
            [&](const NpyHeader& h) {
                if (h.descr != dtype) {
                    throw FormatError(label(name) + ": expected dtype '" + std::string(dtype) + "', found '" +
                                      h.descr + "'");
                }
                if (header_out) *header_out = h;
                bytes.reserve(h.numel() * sizeof(T));
            },
            [&](std::span<const std::uint8_t> c) { bytes.insert(bytes.end(), c.begin(), c.end()); });
        out.resize(bytes.size() / sizeof(T));
        for (std::size_t i = 0; i < out.size(); ++i) {
            const std::uint64_t raw = detail::le(bytes.data() + i * sizeof(T), sizeof(T));
            std::memcpy(&out[i], &raw, sizeof(T));
        }
        return out;
    }

    ZipReader zip_;
};

}  // namespace vaemech
