#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "maa/matrix.hpp"

namespace maa {

// Canonical modality ids. The format supports ids up to 255 so new
// modalities can be added without touching the container.
enum : std::uint8_t { kModalityGlobal = 0, kModalityLocal = 1, kModalityText = 2 };

struct ModalityInfo {
    std::uint8_t id = 0;
    std::uint32_t dim = 0;
    std::string name;
};

struct DatasetHeader {
    std::uint16_t version = 1;
    std::uint32_t num_classes = 0;
    std::vector<std::string> class_names;
    std::vector<ModalityInfo> modalities;
    std::uint64_t record_count = 0;

    void validate() const;
    int modality_index(std::uint8_t id) const;  // -1 if absent
};

// One sample: per-modality token matrices (row = token) plus a label.
// tokens[i] corresponds to header.modalities[i]; a 0-row matrix means
// the modality is absent for this sample.
struct EmbeddingRecord {
    std::string id;
    std::uint32_t label = 0;
    std::vector<Matrix<float>> tokens;

    int total_tokens() const {
        int n = 0;
        for (const auto& m : tokens) n += m.rows();
        return n;
    }
};

// MAAE container, little-endian, no alignment padding:
//   magic "MAAE" | version u16 | C u32 | C x (u16-len UTF-8 class name)
//   | modality count u8 | per modality: id u8, dim u32, u16-len name
//   | record count u64
//   | per record: u16-len id, label u32,
//     per modality in table order: N u32 then N*dim float32 values.
void write_dataset(const std::string& path, const DatasetHeader& header,
                   const std::vector<EmbeddingRecord>& records);

// Streaming reader; holds at most one record in memory.
class DatasetReader {
public:
    explicit DatasetReader(const std::string& path);

    const DatasetHeader& header() const { return header_; }

    // Returns false when all records have been consumed.
    bool next(EmbeddingRecord& out);

private:
    std::ifstream in_;
    std::string path_;
    DatasetHeader header_;
    std::uint64_t records_read_ = 0;
};

std::vector<EmbeddingRecord> read_all(const std::string& path, DatasetHeader* header_out = nullptr);

// Half-open pixel box.
struct CropBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool operator==(const CropBox&) const = default;
};

// Five half-size crops in order upper-left, upper-right, bottom-left,
// bottom-right, center. Crop size is ceil(H/2) x ceil(W/2) so the four
// corner crops cover the image.
std::array<CropBox, 5> five_crop_boxes(int height, int width);

}  // namespace maa
