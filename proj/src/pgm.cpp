#include "msseg/pgm.hpp"

#include <cctype>
#include <fstream>
#include <string>

namespace msseg {

namespace {

int read_header_int(std::istream & in, std::filesystem::path const & path) {
    // Whitespace and '#' comments may precede each header field.
    int c = in.peek();
    while (in && (std::isspace(c) || c == '#')) {
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
        } else {
            in.get();
        }
        c = in.peek();
    }
    int value = -1;
    if (!(in >> value) || value < 0) {
        throw IoError("malformed PGM header in " + path.string());
    }
    return value;
}

} // namespace

GrayImage read_pgm(std::filesystem::path const & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    char magic[2] = {};
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '5') {
        throw IoError(path.string() + " is not a binary PGM (P5)");
    }
    int const width = read_header_int(in, path);
    int const height = read_header_int(in, path);
    int const maxval = read_header_int(in, path);
    if (width < 1 || height < 1 || maxval < 1 || maxval > 255) {
        throw IoError("unsupported PGM geometry or maxval in " + path.string());
    }
    in.get(); // single whitespace after maxval
    GrayImage image({width, height});
    in.read(reinterpret_cast<char *>(image.data().data()),
            static_cast<std::streamsize>(image.data().size()));
    if (in.gcount() != static_cast<std::streamsize>(image.data().size())) {
        throw IoError("truncated pixel data in " + path.string());
    }
    return image;
}

void write_pgm(std::filesystem::path const & path, GrayImage const & image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
    out.write(reinterpret_cast<char const *>(image.data().data()),
              static_cast<std::streamsize>(image.data().size()));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

BinaryMask read_mask_pgm(std::filesystem::path const & path) {
    auto mask = read_pgm(path);
    for (auto & v : mask.data()) {
        v = v != 0 ? 1 : 0;
    }
    return mask;
}

void write_mask_pgm(std::filesystem::path const & path, BinaryMask const & mask) {
    GrayImage scaled = mask;
    for (auto & v : scaled.data()) {
        v = v != 0 ? 255 : 0;
    }
    write_pgm(path, scaled);
}

} // namespace msseg
