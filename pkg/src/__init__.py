# lomar-desk: local masked reconstruction on numpy
