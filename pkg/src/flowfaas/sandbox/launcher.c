/*
 * Trusted launcher for compute functions.
 *
 *   launcher <mem-limit-bytes> <cpu|-1> <binary>
 *   launcher --probe
 *
 * Applies an address-space limit and CPU affinity, installs a seccomp
 * allow-list and execs the function binary with an empty environment. The
 * filter permits only: read(0), write(1|2), memory management, exit, the
 * bootstrap calls a static libc issues before main(), and exactly one
 * execve of the binary path owned by this process. Anything else kills the
 * process with SIGSYS.
 */
#define _GNU_SOURCE
#include <errno.h>
#include <linux/audit.h>
#include <linux/filter.h>
#include <linux/seccomp.h>
#include <sched.h>
#include <stddef.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <sys/prctl.h>
#include <sys/resource.h>
#include <sys/syscall.h>
#include <unistd.h>

#if defined(__x86_64__)
#define ARCH_NR AUDIT_ARCH_X86_64
#elif defined(__aarch64__)
#define ARCH_NR AUDIT_ARCH_AARCH64
#else
#error "unsupported architecture"
#endif

#define NR_OFF   (offsetof(struct seccomp_data, nr))
#define ARCH_OFF (offsetof(struct seccomp_data, arch))
#define ARG_LO(n) (offsetof(struct seccomp_data, args) + 8 * (n))
#define ARG_HI(n) (offsetof(struct seccomp_data, args) + 8 * (n) + 4)

#define MAX_INSNS 128

static struct sock_filter prog[MAX_INSNS];
static int n_insns;

static void emit(struct sock_filter f) {
    if (n_insns >= MAX_INSNS) {
        fputs("launcher: filter too long\n", stderr);
        _exit(125);
    }
    prog[n_insns++] = f;
}

#define LD(off)  emit((struct sock_filter)BPF_STMT(BPF_LD | BPF_W | BPF_ABS, (off)))
#define RET(v)   emit((struct sock_filter)BPF_STMT(BPF_RET | BPF_K, (v)))
#define JEQ(k, t, f) emit((struct sock_filter)BPF_JUMP(BPF_JMP | BPF_JEQ | BPF_K, (k), (t), (f)))

/* if nr == sys: return ALLOW */
static void allow(long sys) {
    JEQ((uint32_t)sys, 0, 1);
    RET(SECCOMP_RET_ALLOW);
}

/* if nr == sys: return errno(EPERM) (harmless probes made by libc) */
static void deny_soft(long sys) {
    JEQ((uint32_t)sys, 0, 1);
    RET(SECCOMP_RET_ERRNO | (EPERM & SECCOMP_RET_DATA));
}

/* if nr == sys and lo32(arg0) in fds: allow; if nr == sys: kill */
static void allow_fd(long sys, int fd_a, int fd_b) {
    JEQ((uint32_t)sys, 0, 7);
    LD(ARG_HI(0));
    JEQ(0, 0, 3);
    LD(ARG_LO(0));
    JEQ((uint32_t)fd_a, 2, 0);
    JEQ((uint32_t)fd_b, 1, 0);
    RET(SECCOMP_RET_KILL_PROCESS);
    RET(SECCOMP_RET_ALLOW);
}

static void build_filter(const char *exec_path) {
    uint64_t p = (uint64_t)(uintptr_t)exec_path;

    LD(ARCH_OFF);
    JEQ(ARCH_NR, 1, 0);
    RET(SECCOMP_RET_KILL_PROCESS);
    LD(NR_OFF);
#if defined(__x86_64__)
    /* reject x32 ABI numbers */
    emit((struct sock_filter)BPF_JUMP(BPF_JMP | BPF_JGE | BPF_K, 0x40000000u, 0, 1));
    RET(SECCOMP_RET_KILL_PROCESS);
#endif
    /* execve only of the binary path string living in this process */
    JEQ(SYS_execve, 0, 6);
    LD(ARG_LO(0));
    JEQ((uint32_t)p, 0, 3);
    LD(ARG_HI(0));
    JEQ((uint32_t)(p >> 32), 0, 1);
    RET(SECCOMP_RET_ALLOW);
    RET(SECCOMP_RET_KILL_PROCESS);
    LD(NR_OFF);

    allow_fd(SYS_read, 0, 0);
    allow_fd(SYS_write, 1, 2);

    allow(SYS_brk);
    allow(SYS_mmap);
    allow(SYS_munmap);
    allow(SYS_mremap);
    allow(SYS_mprotect);
    allow(SYS_madvise);
    allow(SYS_exit);
    allow(SYS_exit_group);
    allow(SYS_rt_sigreturn);
    /* static libc bootstrap */
#ifdef SYS_arch_prctl
    allow(SYS_arch_prctl);
#endif
    allow(SYS_set_tid_address);
    allow(SYS_set_robust_list);
#ifdef SYS_rseq
    allow(SYS_rseq);
#endif
    allow(SYS_prlimit64);
    allow(SYS_getrandom);
    allow(SYS_uname);
#ifdef SYS_readlink
    deny_soft(SYS_readlink);
#endif
    deny_soft(SYS_readlinkat);
#ifdef SYS_fstat
    deny_soft(SYS_fstat);
#endif
    deny_soft(SYS_newfstatat);
    deny_soft(SYS_ioctl);
    RET(SECCOMP_RET_KILL_PROCESS);
}

static int install(const char *exec_path) {
    struct sock_fprog fprog;
    build_filter(exec_path);
    fprog.len = (unsigned short)n_insns;
    fprog.filter = prog;
    if (prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0)
        return -1;
    return (int)syscall(SYS_seccomp, SECCOMP_SET_MODE_FILTER, 0, &fprog);
}

int main(int argc, char **argv) {
    if (argc == 2 && strcmp(argv[1], "--probe") == 0) {
        static const char dummy[] = "";
        if (install(dummy) != 0) {
            perror("launcher: seccomp");
            return 1;
        }
        return 0;
    }
    if (argc != 4) {
        fputs("usage: launcher <mem-limit> <cpu> <binary>\n", stderr);
        return 125;
    }
    unsigned long long mem = strtoull(argv[1], NULL, 10);
    int cpu = atoi(argv[2]);
    char *path = argv[3];
    char *child_argv[] = {path, NULL};
    char *child_env[] = {NULL};

    if (mem > 0) {
        struct rlimit rl = {(rlim_t)mem, (rlim_t)mem};
        setrlimit(RLIMIT_AS, &rl);
    }
    struct rlimit nocore = {0, 0};
    setrlimit(RLIMIT_CORE, &nocore);
    if (cpu >= 0) {
        cpu_set_t set;
        CPU_ZERO(&set);
        CPU_SET(cpu, &set);
        sched_setaffinity(0, sizeof(set), &set);
    }
    if (install(path) != 0) {
        perror("launcher: seccomp");
        return 126;
    }
    execve(path, child_argv, child_env);
    return 127;
}
