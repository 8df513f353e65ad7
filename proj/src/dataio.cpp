#include "maa/dataio.hpp"

#include <bit>
#include <cstring>
#include <limits>
#include <set>

#include "maa/common.hpp"

namespace maa {

namespace {

constexpr char kMagic[4] = {'M', 'A', 'A', 'E'};
constexpr std::uint16_t kFormatVersion = 1;

// All multi-byte values are little-endian on disk. The writers below
// serialize byte-by-byte so the format is identical on any host.
void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string16(std::string& buf, const std::string& s) {
    if (s.size() > std::numeric_limits<std::uint16_t>::max()) {
        throw ConfigError("write_dataset: string longer than 65535 bytes");
    }
    put_u16(buf, static_cast<std::uint16_t>(s.size()));
    buf.append(s);
}

void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u32(buf, bits);
}

class ByteReader {
public:
    ByteReader(std::ifstream& in, const std::string& path) : in_(in), path_(path) {
        const auto pos = in_.tellg();
        if (pos > 0) offset_ = static_cast<std::uint64_t>(pos);
    }

    std::uint64_t offset() const { return offset_; }

    void read_exact(void* dst, std::size_t n, const char* what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw FormatError("read_dataset: truncated file '" + path_ + "' while reading " +
                              what + " at byte offset " + std::to_string(offset_));
        }
        offset_ += n;
    }

    std::uint16_t u16(const char* what) {
        unsigned char b[2];
        read_exact(b, 2, what);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }

    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        read_exact(b, 4, what);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    std::uint64_t u64(const char* what) {
        std::uint64_t v = 0;
        unsigned char b[8];
        read_exact(b, 8, what);
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    std::string string16(const char* what) {
        const std::uint16_t len = u16(what);
        std::string s(len, '\0');
        if (len > 0) read_exact(s.data(), len, what);
        return s;
    }

    void f32_block(float* dst, std::size_t count, const char* what) {
        // float32 payloads are bulk-read; byte-swap would go here on a
        // big-endian host, which this project does not target.
        static_assert(std::endian::native == std::endian::little,
                      "MAAE reader assumes a little-endian host");
        read_exact(dst, count * sizeof(float), what);
    }

private:
    std::ifstream& in_;
    const std::string& path_;
    std::uint64_t offset_ = 0;
};

void validate_record_against_header(const DatasetHeader& header, const EmbeddingRecord& rec) {
    if (rec.label >= header.num_classes) {
        throw ConfigError("dataset: record '" + rec.id + "' has label " + std::to_string(rec.label) +
                          " >= class count " + std::to_string(header.num_classes));
    }
    if (rec.tokens.size() != header.modalities.size()) {
        throw ConfigError("dataset: record '" + rec.id + "' has " + std::to_string(rec.tokens.size()) +
                          " modalities, header declares " + std::to_string(header.modalities.size()));
    }
    int total = 0;
    for (std::size_t m = 0; m < rec.tokens.size(); ++m) {
        const auto& mat = rec.tokens[m];
        total += mat.rows();
        if (mat.rows() > 0 && mat.cols() != static_cast<int>(header.modalities[m].dim)) {
            throw ConfigError("dataset: record '" + rec.id + "' modality '" + header.modalities[m].name +
                              "' has dim " + std::to_string(mat.cols()) + ", header declares " +
                              std::to_string(header.modalities[m].dim));
        }
    }
    if (total < 1) {
        throw ConfigError("dataset: record '" + rec.id + "' has no tokens in any modality");
    }
}

}  // namespace

void DatasetHeader::validate() const {
    if (num_classes < 2) throw ConfigError("dataset header: class count must be >= 2");
    if (class_names.size() != num_classes) {
        throw ConfigError("dataset header: class name count does not match class count");
    }
    if (modalities.empty()) throw ConfigError("dataset header: no modalities");
    std::set<std::uint8_t> ids;
    for (const auto& m : modalities) {
        if (!ids.insert(m.id).second) {
            throw ConfigError("dataset header: duplicate modality id " + std::to_string(m.id));
        }
        if (m.dim == 0) throw ConfigError("dataset header: modality '" + m.name + "' has dim 0");
    }
}

int DatasetHeader::modality_index(std::uint8_t id) const {
    for (std::size_t i = 0; i < modalities.size(); ++i) {
        if (modalities[i].id == id) return static_cast<int>(i);
    }
    return -1;
}

void write_dataset(const std::string& path, const DatasetHeader& header,
                   const std::vector<EmbeddingRecord>& records) {
    header.validate();
    for (const auto& rec : records) validate_record_against_header(header, rec);

    std::string buf;
    buf.append(kMagic, 4);
    put_u16(buf, kFormatVersion);
    put_u32(buf, header.num_classes);
    for (const auto& name : header.class_names) put_string16(buf, name);
    if (header.modalities.size() > 255) throw ConfigError("write_dataset: more than 255 modalities");
    buf.push_back(static_cast<char>(header.modalities.size()));
    for (const auto& m : header.modalities) {
        buf.push_back(static_cast<char>(m.id));
        put_u32(buf, m.dim);
        put_string16(buf, m.name);
    }
    put_u64(buf, records.size());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write_dataset: cannot open '" + path + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));

    for (const auto& rec : records) {
        buf.clear();
        put_string16(buf, rec.id);
        put_u32(buf, rec.label);
        for (const auto& mat : rec.tokens) {
            put_u32(buf, static_cast<std::uint32_t>(mat.rows()));
            for (float v : mat.raw()) put_f32(buf, v);
        }
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
    out.flush();
    if (!out) throw IoError("write_dataset: write failed for '" + path + "'");
}

DatasetReader::DatasetReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("read_dataset: cannot open '" + path + "'");
    ByteReader r(in_, path_);
    char magic[4];
    r.read_exact(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("read_dataset: bad magic in '" + path + "' at byte offset 0");
    }
    header_.version = r.u16("version");
    if (header_.version != kFormatVersion) {
        throw FormatError("read_dataset: unsupported format version " +
                          std::to_string(header_.version) + " in '" + path + "' at byte offset 4");
    }
    header_.num_classes = r.u32("class count");
    header_.class_names.resize(header_.num_classes);
    for (auto& name : header_.class_names) name = r.string16("class name");
    unsigned char mod_count = 0;
    r.read_exact(&mod_count, 1, "modality count");
    header_.modalities.resize(mod_count);
    for (auto& m : header_.modalities) {
        unsigned char id = 0;
        r.read_exact(&id, 1, "modality id");
        m.id = id;
        m.dim = r.u32("modality dim");
        m.name = r.string16("modality name");
    }
    header_.record_count = r.u64("record count");
    header_.validate();
}

bool DatasetReader::next(EmbeddingRecord& out) {
    if (records_read_ >= header_.record_count) return false;
    ByteReader r(in_, path_);
    out.id = r.string16("record id");
    out.label = r.u32("record label");
    out.tokens.assign(header_.modalities.size(), Matrix<float>());
    for (std::size_t m = 0; m < header_.modalities.size(); ++m) {
        const std::uint32_t n = r.u32("token count");
        const std::uint32_t dim = header_.modalities[m].dim;
        out.tokens[m] = Matrix<float>(static_cast<int>(n), static_cast<int>(dim));
        if (n > 0) {
            r.f32_block(out.tokens[m].raw().data(),
                        static_cast<std::size_t>(n) * dim, "token values");
        }
    }
    validate_record_against_header(header_, out);
    ++records_read_;
    return true;
}

std::vector<EmbeddingRecord> read_all(const std::string& path, DatasetHeader* header_out) {
    DatasetReader reader(path);
    if (header_out) *header_out = reader.header();
    std::vector<EmbeddingRecord> records;
    records.reserve(reader.header().record_count);
    EmbeddingRecord rec;
    while (reader.next(rec)) records.push_back(rec);
    return records;
}

std::array<CropBox, 5> five_crop_boxes(int height, int width) {
    if (height < 2 || width < 2) {
        throw ConfigError("five_crop_boxes: image must be at least 2x2 pixels");
    }
    const int h = (height + 1) / 2;
    const int w = (width + 1) / 2;
    const int cy = (height - h) / 2;
    const int cx = (width - w) / 2;
    return {{
        {0, 0, w, h},                                  // upper-left
        {width - w, 0, width, h},                      // upper-right
        {0, height - h, w, height},                    // bottom-left
        {width - w, height - h, width, height},        // bottom-right
        {cx, cy, cx + w, cy + h},                      // center
    }};
}

}  // namespace maa
