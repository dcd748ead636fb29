#include <string.h>

void trim_copy(char *dst, const char *src) {
    strcpy(dst, src);
    size_t n = strlen(dst);
    while (n > 0 && dst[n - 1] == ' ') {
        dst[--n] = '\0';
    }
}
