#include "ddcal/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ddcal/error.hpp"

namespace ddcal {

static_assert(std::endian::native == std::endian::little, "named-tensor files assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'D', 'C', 'A', 'L', 'N', 'T', '1'};

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size())
            throw FormatError(what_ + ": truncated at byte offset " + std::to_string(pos_));
    }
    const std::string& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save_named_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                        const std::string& header) {
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint64_t>(out, header.size());
    out += header;
    put<std::uint64_t>(out, tensors.size());
    for (const auto& t : tensors) {
        put<std::uint64_t>(out, t.name.size());
        out += t.name;
        put<std::uint64_t>(out, t.value.rank());
        for (std::size_t d : t.value.shape()) put<std::uint64_t>(out, d);
        for (double v : t.value.data()) put<double>(out, v);
    }
    write_file_atomic(path, out);
}

NamedTensorFile load_named_tensors(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    Reader r(bytes, path.filename().string());
    if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
        throw FormatError(path.filename().string() + ": bad magic at byte offset 0");
    NamedTensorFile file;
    file.header = r.str(r.get<std::uint64_t>());
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.str(r.get<std::uint64_t>());
        const auto rank = r.get<std::uint64_t>();
        if (rank > 8) throw FormatError(path.filename().string() + ": implausible rank at byte offset " +
                                        std::to_string(r.pos() - 8));
        Shape shape(rank);
        for (auto& d : shape) d = r.get<std::uint64_t>();
        std::vector<double> values(shape_numel(shape));
        for (double& v : values) v = r.get<double>();
        t.value = Tensor(std::move(shape), std::move(values));
        file.tensors.push_back(std::move(t));
    }
    return file;
}

}  // namespace ddcal
