#include <cstdio>

int main() {
    std::puts("lore: cli not wired yet");
    return 1;
}
