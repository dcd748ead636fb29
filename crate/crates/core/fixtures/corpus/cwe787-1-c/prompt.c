#include <string.h>

void copy_message(const char *src) {
    char dst[32];
    strcpy(dst, src);
    (void)dst;
}
