#pragma once

// Jailed execution of candidate scripts and the repair loop.
//
// The script is fed to the interpreter on stdin so the working directory holds
// nothing but input.geojson. The child gets a private network namespace,
// resource limits, its own process group and a Landlock ruleset that allows
// writes only inside the working directory.

#include <atomic>
#include <chrono>
#include <cmath>
#include <climits>
#include <cstring>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include "echomimic/candidate.hpp"
#include "echomimic/landscape_io.hpp"

namespace echomimic {

enum class ExecStatus { ok, parse_failure, runtime_failure, timeout, output_invalid };

inline std::string_view to_string(ExecStatus s) {
    switch (s) {
        case ExecStatus::ok: return "ok";
        case ExecStatus::parse_failure: return "parse_failure";
        case ExecStatus::runtime_failure: return "runtime_failure";
        case ExecStatus::timeout: return "timeout";
        case ExecStatus::output_invalid: return "output_invalid";
    }
    return "";
}

/// Which output contract applies: interventions in output.geojson, or
/// direction records in output.json.
enum class ExecStage { baseline, global, nudged };

inline std::string_view output_file_name(ExecStage s) { return s == ExecStage::global ? "output.json" : "output.geojson"; }

using OutputRecords = std::variant<std::monostate, PlotInterventions, DirectionMap>;

struct ExecutionResult {
    ExecStatus status = ExecStatus::runtime_failure;
    OutputRecords output;
    std::string trace;
    double wall_time = 0.0;
    std::vector<std::string> diagnostics;

    bool ok() const { return status == ExecStatus::ok; }
    const PlotInterventions* interventions() const { return std::get_if<PlotInterventions>(&output); }
    const DirectionMap* directions() const { return std::get_if<DirectionMap>(&output); }
};

struct SandboxLimits {
    double timeout_s = 30.0;
    std::uint64_t memory_bytes = 512ull << 20;
    std::uint64_t max_file_bytes = 64ull << 20;
    std::uint64_t max_open_files = 256;
    std::vector<std::string> interpreter{"python3", "-I", "-"};
    std::vector<std::string> read_only_paths{"/usr", "/lib", "/lib64", "/bin", "/etc", "/opt", "/proc", "/dev"};
    std::vector<std::string> writable_devices{"/dev/null"};
    fs::path scratch_root = fs::temp_directory_path();
    bool require_isolation = true;  // fail instead of running unconfined
    bool keep_workdir = false;
    std::size_t max_trace_bytes = 16384;
};

namespace detail {

// Landlock ABI constants (the installed uapi header may predate them).
inline constexpr std::uint64_t ll_execute = 1ull << 0;
inline constexpr std::uint64_t ll_write_file = 1ull << 1;
inline constexpr std::uint64_t ll_read_file = 1ull << 2;
inline constexpr std::uint64_t ll_read_dir = 1ull << 3;
inline constexpr std::uint64_t ll_abi1_all = (1ull << 13) - 1;
inline constexpr std::uint64_t ll_refer = 1ull << 13;
inline constexpr std::uint64_t ll_truncate = 1ull << 14;
inline constexpr std::uint64_t ll_ioctl_dev = 1ull << 15;
inline constexpr int ll_rule_path_beneath = 1;

struct LlRulesetAttr {
    std::uint64_t handled_access_fs;
};
struct __attribute__((packed)) LlPathBeneathAttr {
    std::uint64_t allowed_access;
    std::int32_t parent_fd;
};

inline int landlock_abi() {
    const long v = ::syscall(SYS_landlock_create_ruleset, nullptr, 0, 1u);
    return v < 0 ? 0 : static_cast<int>(v);
}

/// Built in the parent; the child only calls restrict_self on the fd.
class LandlockRuleset {
public:
    LandlockRuleset(const std::vector<std::string>& read_only, const std::vector<std::string>& devices,
                    const fs::path& workdir, std::string& error) {
        const int abi = landlock_abi();
        if (abi < 1) {
            error = "landlock unavailable";
            return;
        }
        std::uint64_t handled = ll_abi1_all;
        if (abi >= 2) handled |= ll_refer;
        if (abi >= 3) handled |= ll_truncate;
        if (abi >= 5) handled |= ll_ioctl_dev;
        LlRulesetAttr attr{handled};
        fd_ = static_cast<int>(::syscall(SYS_landlock_create_ruleset, &attr, sizeof(attr), 0u));
        if (fd_ < 0) {
            error = std::string("landlock_create_ruleset: ") + std::strerror(errno);
            return;
        }
        const std::uint64_t ro = ll_execute | ll_read_file | ll_read_dir;
        for (const auto& p : read_only) add(p, ro, false);
        for (const auto& d : devices) add(d, (ro | ll_write_file | ll_truncate | ll_ioctl_dev) & handled, false);
        add(workdir.string(), handled, true);
        if (!add_error_.empty()) error = add_error_;
    }
    ~LandlockRuleset() {
        if (fd_ >= 0) ::close(fd_);
    }
    LandlockRuleset(const LandlockRuleset&) = delete;
    LandlockRuleset& operator=(const LandlockRuleset&) = delete;

    int fd() const { return fd_; }

private:
    void add(const std::string& path, std::uint64_t access, bool required) {
        const int pfd = ::open(path.c_str(), O_PATH | O_CLOEXEC);
        if (pfd < 0) {
            if (required) add_error_ = "cannot open " + path;
            return;
        }
        struct stat st {};
        if (::fstat(pfd, &st) == 0 && !S_ISDIR(st.st_mode))
            access &= ll_execute | ll_write_file | ll_read_file | ll_truncate | ll_ioctl_dev;
        LlPathBeneathAttr rule{access, pfd};
        if (::syscall(SYS_landlock_add_rule, fd_, ll_rule_path_beneath, &rule, 0u) != 0 && required)
            add_error_ = std::string("landlock_add_rule: ") + std::strerror(errno);
        ::close(pfd);
    }
    int fd_ = -1;
    std::string add_error_;
};

inline std::optional<std::string> resolve_executable(const std::string& name) {
    if (name.find('/') != std::string::npos) return ::access(name.c_str(), X_OK) == 0 ? std::optional(name) : std::nullopt;
    const char* path = std::getenv("PATH");
    std::string_view rest = path ? path : "/usr/local/bin:/usr/bin:/bin";
    while (!rest.empty()) {
        const auto colon = rest.find(':');
        const std::string dir(rest.substr(0, colon));
        rest = colon == std::string_view::npos ? std::string_view{} : rest.substr(colon + 1);
        if (dir.empty()) continue;
        const std::string cand = dir + "/" + name;
        if (::access(cand.c_str(), X_OK) == 0) return cand;
    }
    return std::nullopt;
}

inline fs::path make_workdir(const fs::path& root) {
    fs::create_directories(root);
    std::string tmpl = (root / "echomimic_run_XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed under " + root.string());
    return tmpl;
}

[[noreturn]] inline void child_fail(int fd, const char* what) {
    const int e = errno;
    const char* msg = std::strerror(e);
    (void)!::write(fd, "sandbox: ", 9);
    (void)!::write(fd, what, std::strlen(what));
    (void)!::write(fd, ": ", 2);
    (void)!::write(fd, msg, std::strlen(msg));
    (void)!::write(fd, "\n", 1);
    ::_exit(126);
}

struct RawRun {
    int exit_code = -1;
    int signal = 0;
    bool timed_out = false;
    std::string stdout_text;
    std::string stderr_text;
    double wall_time = 0.0;
};

/// fork/exec with the jail applied in the child; stdin receives `input`.
inline RawRun run_jailed(const std::vector<std::string>& argv_in, const fs::path& workdir, const std::string& input,
                         const SandboxLimits& limits, const LandlockRuleset* ruleset) {
    std::vector<std::string> env_store{"PATH=/usr/local/bin:/usr/bin:/bin", "HOME=" + workdir.string(),
                                       "LANG=C.UTF-8", "PYTHONDONTWRITEBYTECODE=1", "PYTHONHASHSEED=0",
                                       "OPENBLAS_NUM_THREADS=1", "OMP_NUM_THREADS=1", "MKL_NUM_THREADS=1"};
    std::vector<char*> argv, envp;
    for (const auto& a : argv_in) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    for (const auto& e : env_store) envp.push_back(const_cast<char*>(e.c_str()));
    envp.push_back(nullptr);
    const std::string wd = workdir.string();
    const int ruleset_fd = ruleset ? ruleset->fd() : -1;
    const rlim_t cpu = static_cast<rlim_t>(std::ceil(limits.timeout_s)) + 1;

    int in_pipe[2], out_pipe[2], err_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) || ::pipe2(out_pipe, O_CLOEXEC) || ::pipe2(err_pipe, O_CLOEXEC))
        throw std::runtime_error("pipe failed");

    const auto start = std::chrono::steady_clock::now();
    const pid_t pid = ::fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
        ::setpgid(0, 0);
        ::dup2(in_pipe[0], 0);
        ::dup2(out_pipe[1], 1);
        ::dup2(err_pipe[1], 2);
        if (::chdir(wd.c_str()) != 0) child_fail(2, "chdir");
        if (::unshare(CLONE_NEWNET) != 0 && ::unshare(CLONE_NEWUSER | CLONE_NEWNET) != 0 && limits.require_isolation)
            child_fail(2, "network namespace");
        const struct rlimit as{limits.memory_bytes, limits.memory_bytes};
        const struct rlimit cpu_lim{cpu, cpu};
        const struct rlimit fsize{limits.max_file_bytes, limits.max_file_bytes};
        const struct rlimit nofile{limits.max_open_files, limits.max_open_files};
        const struct rlimit core{0, 0};
        ::setrlimit(RLIMIT_AS, &as);
        ::setrlimit(RLIMIT_CPU, &cpu_lim);
        ::setrlimit(RLIMIT_FSIZE, &fsize);
        ::setrlimit(RLIMIT_NOFILE, &nofile);
        ::setrlimit(RLIMIT_CORE, &core);
        if (::prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0) child_fail(2, "no_new_privs");
        if (ruleset_fd >= 0) {
            if (::syscall(SYS_landlock_restrict_self, ruleset_fd, 0u) != 0) child_fail(2, "landlock_restrict_self");
            ::close(ruleset_fd);
        } else if (limits.require_isolation) {
            errno = ENOSYS;
            child_fail(2, "landlock");
        }
        ::execve(argv[0], argv.data(), envp.data());
        child_fail(2, "execve");
    }
    ::setpgid(pid, pid);
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    ::fcntl(in_pipe[1], F_SETFL, O_NONBLOCK);

    RawRun run;
    const auto deadline = start + std::chrono::duration<double>(limits.timeout_s);
    std::size_t written = 0;
    int in_fd = in_pipe[1];
    if (input.empty()) {
        ::close(in_fd);
        in_fd = -1;
    }
    bool out_open = true, err_open = true;
    const std::size_t cap = 4 * limits.max_trace_bytes + (1u << 20);
    char buf[65536];
    while (out_open || err_open) {
        const auto now = std::chrono::steady_clock::now();
        if (now >= deadline) {
            run.timed_out = true;
            break;
        }
        const int wait_ms =
            static_cast<int>(std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count()) + 1;
        std::vector<pollfd> fds;
        if (out_open) fds.push_back({out_pipe[0], POLLIN, 0});
        if (err_open) fds.push_back({err_pipe[0], POLLIN, 0});
        if (in_fd >= 0) fds.push_back({in_fd, POLLOUT, 0});
        const int rc = ::poll(fds.data(), fds.size(), std::min(wait_ms, 200));
        if (rc < 0 && errno != EINTR) break;
        for (const auto& p : fds) {
            if (!p.revents) continue;
            if (p.fd == in_fd) {
                const ssize_t n = ::write(in_fd, input.data() + written, input.size() - written);
                if (n > 0) written += static_cast<std::size_t>(n);
                if (n < 0 && errno != EAGAIN) written = input.size();
                if (written >= input.size()) {
                    ::close(in_fd);
                    in_fd = -1;
                }
                continue;
            }
            const ssize_t n = ::read(p.fd, buf, sizeof buf);
            auto& sink = p.fd == out_pipe[0] ? run.stdout_text : run.stderr_text;
            if (n > 0) {
                if (sink.size() < cap) sink.append(buf, static_cast<std::size_t>(n));
            } else if (n == 0 || errno != EAGAIN) {
                (p.fd == out_pipe[0] ? out_open : err_open) = false;
            }
        }
    }
    if (in_fd >= 0) ::close(in_fd);
    ::close(out_pipe[0]);
    ::close(err_pipe[0]);

    int status = 0;
    if (run.timed_out) {
        ::killpg(pid, SIGKILL);
        ::kill(pid, SIGKILL);
        ::waitpid(pid, &status, 0);
    } else {
        // Pipes closed; the process is exiting or has detached its streams.
        while (true) {
            const pid_t w = ::waitpid(pid, &status, WNOHANG);
            if (w == pid) break;
            if (std::chrono::steady_clock::now() >= deadline) {
                run.timed_out = true;
                ::killpg(pid, SIGKILL);
                ::waitpid(pid, &status, 0);
                break;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
        ::killpg(pid, SIGKILL);  // stray grandchildren
    }
    run.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (WIFEXITED(status)) run.exit_code = WEXITSTATUS(status);
    if (WIFSIGNALED(status)) run.signal = WTERMSIG(status);
    return run;
}

inline std::string tail(const std::string& s, std::size_t max) {
    return s.size() <= max ? s : "...\n" + s.substr(s.size() - max);
}

}  // namespace detail

/// Heuristic-script output contract check: parses and validates the
/// expected artifact in `workdir`.
inline ExecutionResult read_candidate_output(const fs::path& workdir, ExecStage stage) {
    ExecutionResult r;
    const fs::path out = workdir / output_file_name(stage);
    if (!fs::exists(out)) {
        r.status = ExecStatus::output_invalid;
        r.trace = "missing " + std::string(output_file_name(stage));
        return r;
    }
    try {
        const json doc = json::parse(read_text(out));
        if (stage == ExecStage::global) {
            r.output = directions_from_json(doc, std::string(output_file_name(stage)));
        } else {
            auto parsed = interventions_from_json(doc, std::string(output_file_name(stage)));
            r.output = std::move(parsed.records);
            r.diagnostics = std::move(parsed.diagnostics);
        }
        r.status = ExecStatus::ok;
    } catch (const std::exception& e) {
        r.status = ExecStatus::output_invalid;
        r.output = std::monostate{};
        r.trace = std::string("invalid ") + std::string(output_file_name(stage)) + ": " + e.what();
    }
    return r;
}

/// Runs a heuristic script against `input_file` inside a fresh jail.
inline ExecutionResult execute_candidate(const Candidate& candidate, const fs::path& input_file, ExecStage stage,
                                         const SandboxLimits& limits = {}) {
    if (candidate.kind != CandidateKind::heuristic_script)
        throw InputError("execute_candidate: candidate " + candidate.id + " is not a script");
    ExecutionResult result;
    if (candidate.body.find_first_not_of(" \t\r\n") == std::string::npos) {
        result.status = ExecStatus::parse_failure;
        result.trace = "empty script";
        return result;
    }
    if (limits.interpreter.empty()) throw InputError("sandbox interpreter command is empty");
    const auto exe = detail::resolve_executable(limits.interpreter[0]);
    if (!exe) throw InputError("interpreter '" + limits.interpreter[0] + "' not found on PATH");
    std::vector<std::string> argv = limits.interpreter;
    argv[0] = *exe;

    const fs::path workdir = detail::make_workdir(limits.scratch_root);
    struct Cleanup {
        fs::path dir;
        bool keep;
        ~Cleanup() {
            std::error_code ec;
            if (!keep) fs::remove_all(dir, ec);
        }
    } cleanup{workdir, limits.keep_workdir};
    fs::copy_file(input_file, workdir / "input.geojson");

    std::vector<std::string> ro = limits.read_only_paths;
    std::error_code ec;
    const fs::path real = fs::canonical(*exe, ec);
    if (!ec) ro.push_back(real.parent_path().string());
    std::string ll_error;
    detail::LandlockRuleset ruleset(ro, limits.writable_devices, workdir, ll_error);
    if (!ll_error.empty() && limits.require_isolation)
        throw std::runtime_error("sandbox isolation unavailable: " + ll_error);
    if (!ll_error.empty()) result.diagnostics.push_back("running without landlock: " + ll_error);

    const auto raw = detail::run_jailed(argv, workdir, candidate.body, limits, ll_error.empty() ? &ruleset : nullptr);
    result.wall_time = raw.wall_time;
    if (raw.timed_out) {
        result.status = ExecStatus::timeout;
        result.trace = "killed after " + std::to_string(limits.timeout_s) + " s\n" +
                       detail::tail(raw.stderr_text, limits.max_trace_bytes);
        return result;
    }
    if (raw.exit_code == 126 && raw.stderr_text.rfind("sandbox: ", 0) == 0)
        throw std::runtime_error(raw.stderr_text);
    if (raw.exit_code != 0) {
        const bool syntax = raw.stderr_text.find("SyntaxError") != std::string::npos ||
                            raw.stderr_text.find("IndentationError") != std::string::npos;
        result.status = syntax ? ExecStatus::parse_failure : ExecStatus::runtime_failure;
        result.trace = detail::tail(raw.stderr_text, limits.max_trace_bytes);
        if (raw.signal) result.trace += "\nterminated by signal " + std::to_string(raw.signal);
        return result;
    }
    auto parsed = read_candidate_output(workdir, stage);
    parsed.wall_time = result.wall_time;
    parsed.diagnostics.insert(parsed.diagnostics.begin(), result.diagnostics.begin(), result.diagnostics.end());
    return parsed;
}

// ---------------------------------------------------------------------------
// Repair loop

/// Returns a corrected body, or nullopt when the fixer produced nothing usable.
using Fixer = std::function<std::optional<std::string>(const std::string& body, const std::string& trace)>;

struct RepairOutcome {
    Candidate candidate;
    ExecutionResult result;
    int attempts = 0;
    std::optional<FitnessReport> penalty;  // set when still failing
};

inline std::string failure_trace(const ExecutionResult& r) {
    return std::string(to_string(r.status)) + "\n" + r.trace;
}

inline RepairOutcome repair_and_rescore(Candidate candidate, ExecutionResult result, const Fixer& fixer,
                                        int max_attempts, const fs::path& input_file, ExecStage stage,
                                        const SandboxLimits& limits = {}) {
    if (result.ok()) throw InputError("repair_and_rescore: result is already ok");
    RepairOutcome out{std::move(candidate), std::move(result)};
    for (int a = 0; a < max_attempts; ++a) {
        ++out.attempts;
        std::optional<std::string> fixed;
        try {
            fixed = fixer(out.candidate.body, failure_trace(out.result));
        } catch (const std::exception& e) {
            out.result.diagnostics.push_back(std::string("fixer failed: ") + e.what());
            break;
        }
        if (!fixed) {
            out.result.diagnostics.push_back("fixer returned no code");
            continue;
        }
        Candidate attempt = out.candidate;
        attempt.body = *fixed;
        auto r = execute_candidate(attempt, input_file, stage, limits);
        out.candidate.body = std::move(attempt.body);
        out.candidate.lineage.push_back({"fix", {out.candidate.id}});
        out.result = std::move(r);
        if (out.result.ok()) return out;
    }
    out.penalty = penalty_report("unrepaired " + std::string(to_string(out.result.status)) + " after " +
                                 std::to_string(out.attempts) + " attempt(s)");
    return out;
}

// ---------------------------------------------------------------------------

/// Runs `tasks` on up to `width` threads; results keep task order.
template <typename R>
std::vector<R> run_parallel(std::size_t width, const std::vector<std::function<R()>>& tasks) {
    std::vector<std::optional<R>> slots(tasks.size());
    std::vector<std::exception_ptr> errors(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
            try {
                slots[i].emplace(tasks[i]());
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    width = std::max<std::size_t>(1, std::min(width, tasks.size()));
    if (width == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < width; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<R> out;
    out.reserve(tasks.size());
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

}  // namespace echomimic
