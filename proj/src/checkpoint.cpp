#include "mdmrl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace mdmrl {

namespace {

constexpr char kMagic[8] = {'M', 'D', 'M', 'R', 'L', 'C', 'K', '\x01'};
constexpr std::uint32_t kEndianTag = 0x01020304u;

struct Writer {
    std::string buf;
    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void put_bytes(const void* p, std::size_t n) {
        buf.append(static_cast<const char*>(p), n);
    }
};

struct Reader {
    const char* p;
    std::size_t left;
    std::string context;

    template <typename T>
    T get() {
        static_assert(std::is_trivially_copyable_v<T>);
        if (left < sizeof(T)) throw IoError("checkpoint: truncated file (" + context + ")");
        T v;
        std::memcpy(&v, p, sizeof(T));
        p += sizeof(T);
        left -= sizeof(T);
        return v;
    }
    void get_bytes(void* out, std::size_t n) {
        if (left < n) throw IoError("checkpoint: truncated file (" + context + ")");
        std::memcpy(out, p, n);
        p += n;
        left -= n;
    }
};

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

} // namespace

bool Checkpoint::has_array(const std::string& name) const {
    for (const auto& [n, t] : arrays) {
        if (n == name) return true;
    }
    return false;
}

const Tensor& Checkpoint::array(const std::string& name) const {
    for (const auto& [n, t] : arrays) {
        if (n == name) return t;
    }
    throw PreconditionError("checkpoint: missing array " + name);
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
    for (const auto& [n, t] : arrays) {
        if (n.rfind(prefix, 0) == 0) return true;
    }
    return false;
}

void Checkpoint::pack_store(const std::string& prefix, const ParamStore& store) {
    for (std::size_t i = 0; i < store.count(); ++i) {
        const ParamEntry& e = store.entry(i);
        arrays.emplace_back(prefix + e.name, e.value);
        arrays.emplace_back(prefix + e.name + ".m", e.m);
        arrays.emplace_back(prefix + e.name + ".v", e.v);
    }
}

void Checkpoint::unpack_store(const std::string& prefix, ParamStore& store) const {
    for (std::size_t i = 0; i < store.count(); ++i) {
        ParamEntry& e = store.entry(i);
        const Tensor& value = array(prefix + e.name);
        const Tensor& m = array(prefix + e.name + ".m");
        const Tensor& v = array(prefix + e.name + ".v");
        if (value.shape != e.value.shape) {
            throw PreconditionError("checkpoint: array " + prefix + e.name +
                                    " has shape " + value.shape_str() + ", expected " +
                                    e.value.shape_str());
        }
        e.value = value;
        e.m = m;
        e.v = v;
    }
}

void checkpoint_save(const std::filesystem::path& path, const Checkpoint& ckpt) {
    Writer w;
    w.put_bytes(kMagic, sizeof(kMagic));
    w.put<std::uint32_t>(ckpt.version);
    w.put<std::uint32_t>(kEndianTag);
    w.put<std::uint64_t>(ckpt.seed);
    w.put<std::uint64_t>(ckpt.task_hash);
    w.put<std::uint64_t>(ckpt.model_steps);
    w.put<std::uint64_t>(ckpt.schedule_steps);
    w.put<std::uint64_t>(ckpt.updates_done);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.config_text.size()));
    w.put_bytes(ckpt.config_text.data(), ckpt.config_text.size());
    w.put<std::uint64_t>(ckpt.arrays.size());
    for (const auto& [name, tensor] : ckpt.arrays) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
        w.put_bytes(name.data(), name.size());
        w.put<std::uint32_t>(static_cast<std::uint32_t>(tensor.shape.size()));
        for (std::size_t d : tensor.shape) w.put<std::uint64_t>(d);
        w.put_bytes(tensor.data.data(), tensor.data.size() * sizeof(double));
    }

    // Write whole-file via a temporary so a crash cannot leave a readable
    // half-checkpoint at the target path.
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("checkpoint: cannot write " + tmp.string());
        out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
        if (!out) throw IoError("checkpoint: short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("checkpoint: cannot move into place: " + ec.message());
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string bytes = buf.str();
    Reader r{bytes.data(), bytes.size(), "header"};

    char magic[sizeof(kMagic)];
    r.get_bytes(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError("checkpoint: bad magic in " + path.string());
    }
    Checkpoint ckpt;
    ckpt.version = r.get<std::uint32_t>();
    if (ckpt.version != kCheckpointVersion) {
        throw CheckpointVersionError("checkpoint: version " + std::to_string(ckpt.version) +
                                     " unsupported (expected " +
                                     std::to_string(kCheckpointVersion) + ")");
    }
    auto endian = r.get<std::uint32_t>();
    if (endian != kEndianTag) {
        throw IoError("checkpoint: byte-order mismatch");
    }
    ckpt.seed = r.get<std::uint64_t>();
    ckpt.task_hash = r.get<std::uint64_t>();
    ckpt.model_steps = r.get<std::uint64_t>();
    ckpt.schedule_steps = r.get<std::uint64_t>();
    ckpt.updates_done = r.get<std::uint64_t>();
    auto cfg_len = r.get<std::uint32_t>();
    ckpt.config_text.resize(cfg_len);
    r.context = "config text";
    r.get_bytes(ckpt.config_text.data(), cfg_len);
    auto n_arrays = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n_arrays; ++i) {
        r.context = "array " + std::to_string(i);
        auto name_len = r.get<std::uint32_t>();
        std::string name(name_len, '\0');
        r.get_bytes(name.data(), name_len);
        auto rank = r.get<std::uint32_t>();
        std::vector<std::size_t> shape(rank);
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<std::size_t>(r.get<std::uint64_t>());
            numel *= shape[d];
        }
        if (numel > (1u << 28)) throw IoError("checkpoint: implausible array size");
        Tensor t;
        t.shape = std::move(shape);
        t.data.resize(numel);
        r.get_bytes(t.data.data(), numel * sizeof(double));
        ckpt.arrays.emplace_back(std::move(name), std::move(t));
    }
    if (r.left != 0) throw IoError("checkpoint: trailing bytes in " + path.string());
    return ckpt;
}

void verify_task_hash(const Checkpoint& ckpt, std::uint64_t expected) {
    if (ckpt.task_hash != expected) {
        throw TaskMismatchError("checkpoint: task hash " + hex64(ckpt.task_hash) +
                                " does not match configured task " + hex64(expected));
    }
}

} // namespace mdmrl
