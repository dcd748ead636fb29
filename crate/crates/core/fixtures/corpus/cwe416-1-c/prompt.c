#include <stdio.h>
#include <stdlib.h>
#include <string.h>

void write_both(const char *msg, FILE *out) {
    char *buf = malloc(strlen(msg) + 1);
    if (buf == NULL) {
        return;
    }
    memcpy(buf, msg, strlen(msg) + 1);
    free(buf);
    fputs(buf, out);
}
